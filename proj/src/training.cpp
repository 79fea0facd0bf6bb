#include "sram/training.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>

#include "sram/evaluation.hpp"
#include "sram/parallel.hpp"

namespace sram {

namespace {

const std::vector<std::string> kPhaseAGroups = {kDiscriminatorPrefix};
const std::vector<std::string> kPhaseBGroups = {kEncoderPrefix, kActivityPrefix, kPositionPrefix, kClassifierPrefix};

bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
  return std::any_of(prefixes.begin(), prefixes.end(),
                     [&](const std::string& p) { return name.compare(0, p.size(), p) == 0; });
}

// Adds `g` into `sum`, creating entries on first use, restricted to `prefixes`.
void accumulate(GradientMap& sum, const GradientMap& g, const std::vector<std::string>& prefixes) {
  for (const auto& [name, m] : g) {
    if (!has_prefix(name, prefixes)) continue;
    auto it = sum.find(name);
    if (it == sum.end())
      sum.emplace(name, m);
    else
      it->second += m;
  }
}

void scale_all(GradientMap& g, double s) {
  for (auto& [name, m] : g) m *= s;
}

// Rescales the whole gradient so its global L2 norm is at most max_norm.
void clip_norm(GradientMap& g, double max_norm) {
  if (max_norm <= 0) return;
  double sq = 0;
  for (const auto& [name, m] : g) sq += m.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm <= max_norm) return;
  for (auto& [name, m] : g) m *= max_norm / norm;
}

VarD one_minus(const VarD& x) { return x.tape()->constant(Matrix::Ones(x.rows(), x.cols())) - x; }

VarD cross_entropy(const VarD& logits, int label) {
  if (label < 0 || label >= logits.cols())
    throw UsageError("label " + std::to_string(label) + " outside [0," + std::to_string(logits.cols()) + ")");
  return -log_clamped(pick(softmax_rows(logits), 0, label), kProbabilityFloor, 1.0 - kProbabilityFloor);
}

void check_finite(const LossBundle& b, const char* phase) {
  for (double v : {b.l_rec, b.l_gan, b.l_cls, b.l_reg, b.d2_loss})
    if (!std::isfinite(v)) {
      std::ostringstream os;
      os << phase << ": non-finite loss (rec=" << b.l_rec << " gan=" << b.l_gan << " cls=" << b.l_cls
         << " reg=" << b.l_reg << " d2=" << b.d2_loss << ")";
      throw NumericError(os.str());
    }
}

}  // namespace

std::vector<double> default_ratios() {
  std::vector<double> r;
  for (int i = 1; i <= 10; ++i) r.push_back(static_cast<double>(i) / 10.0);
  return r;
}

// --- recognition model ------------------------------------------------------

VarD recognition_forward(Binding& params, const Clip& clip, double epsilon) {
  return stgcn_forward(params, "rec", clip, clip.frames, epsilon);
}

VarD recognition_logits(Binding& params, const Clip& clip, double epsilon) {
  VarD feats = recognition_forward(params, clip, epsilon);
  VarD last = row_block(feats, (clip.frames - 1) * clip.agents, clip.agents);
  return add_row(matmul(colmax(last), params("rec.head.w")), params("rec.head.b"));
}

std::vector<double> train_recognition(SramModel& model, const Dataset& full, const TrainConfig& config) {
  if (full.clips.empty()) throw DataError("train_recognition: empty dataset");
  if (model.recognition_frozen) throw UsageError("recognition model is already frozen");
  const double eps = model.config.graph_epsilon;
  SgdMomentum opt(config.learning_rate, config.momentum);
  std::mt19937_64 rng(config.seed ^ 0x5EC0661Eull);
  std::vector<std::size_t> order(full.clips.size());
  std::iota(order.begin(), order.end(), 0);
  const std::vector<std::string> groups = {kRecognitionPrefix};
  std::vector<double> history;
  for (Index e = 0; e < config.recognition_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<GradientMap> grads(end - start);
      std::vector<double> losses(end - start);
      parallel_for(end - start, config.threads, [&](std::size_t i) {
        const Clip& clip = full.clips[order[start + i]];
        TapeD tape;
        Binding bind(tape, model.params);
        VarD loss = cross_entropy(recognition_logits(bind, clip, eps), clip.label);
        losses[i] = loss.scalar();
        grads[i] = backward(loss, bind);
      });
      GradientMap sum;
      for (std::size_t i = 0; i < grads.size(); ++i) {
        accumulate(sum, grads[i], groups);
        epoch_loss += losses[i];
      }
      scale_all(sum, 1.0 / static_cast<double>(grads.size()));
      clip_norm(sum, config.grad_clip);
      opt.step(model.params, sum, groups);
    }
    history.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  model.recognition_frozen = true;
  return history;
}

double recognition_accuracy(const SramModel& model, const Dataset& data) {
  if (data.clips.empty()) return 0;
  Index correct = 0;
  for (const auto& clip : data.clips) {
    TapeD tape;
    Binding bind(tape, model.params, false);
    if (argmax_class(recognition_logits(bind, clip, model.config.graph_epsilon).value()) == clip.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.clips.size());
}

Matrix recognition_features(const SramModel& model, const Clip& clip) {
  TapeD tape;
  Binding bind(tape, model.params, false);
  return recognition_forward(bind, clip, model.config.graph_epsilon).value();
}

std::vector<Matrix> slice_stages(const Matrix& per_frame, Index agents, std::span<const Index> stage_times) {
  const Index frames = per_frame.rows() / agents;
  std::vector<Matrix> out;
  out.reserve(stage_times.size());
  for (Index tau : stage_times) {
    if (tau < 1 || tau > frames)
      throw DimensionError("stage time " + std::to_string(tau) + " outside [1," + std::to_string(frames) + "]");
    out.push_back(per_frame.middleRows((tau - 1) * agents, agents));
  }
  return out;
}

std::vector<Matrix> recognition_targets(const SramModel& model, const Clip& clip, std::span<const Index> stage_times) {
  if (!model.recognition_frozen) throw UsageError("recognition targets require a frozen recognition model");
  return slice_stages(recognition_features(model, clip), clip.agents, stage_times);
}

std::vector<Matrix> stage_positions(const Clip& clip, std::span<const Index> stage_times) {
  return slice_stages(clip.normalized_positions, clip.agents, stage_times);
}

// --- discriminators ---------------------------------------------------------

VarD classifier_logits(Binding& params, const VarD& aggregated) {
  return add_row(matmul(aggregated, params("d1.w")), params("d1.b"));
}

VarD discriminator_score(Binding& params, const std::vector<VarD>& stage_features) {
  if (stage_features.empty()) throw DimensionError("discriminator_score: no stages");
  VarD w1 = params("d2.w1"), b1 = params("d2.b1"), w2 = params("d2.w2"), b2 = params("d2.b2");
  std::vector<VarD> scores;
  scores.reserve(stage_features.size());
  for (const auto& f : stage_features)
    scores.push_back(sigmoid(add_row(matmul(relu(add_row(matmul(colmax(f), w1), b1)), w2), b2)));
  return mean_n(scores);
}

// --- losses -----------------------------------------------------------------

VarD loss_rec(const AnticipationRollout& rollout, const std::vector<Matrix>& targets) {
  if (targets.size() != rollout.features.size())
    throw DimensionError("loss_rec: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rollout.features.size()) + " stages");
  TapeD& tape = *rollout.features.front().tape();
  std::vector<VarD> per_stage;
  per_stage.reserve(targets.size());
  for (std::size_t k = 0; k < targets.size(); ++k)
    per_stage.push_back(mse(rollout.features[k], tape.constant(targets[k])));
  return mean_n(per_stage);
}

VarD loss_reg(const AnticipationRollout& rollout, const std::vector<Matrix>& positions) {
  if (positions.size() != rollout.positions.size())
    throw DimensionError("loss_reg: " + std::to_string(positions.size()) + " targets for " +
                         std::to_string(rollout.positions.size()) + " stages");
  TapeD& tape = *rollout.positions.front().tape();
  std::vector<VarD> per_stage;
  per_stage.reserve(positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k)
    per_stage.push_back(mse(rollout.positions[k], tape.constant(positions[k])));
  return mean_n(per_stage);
}

GanLosses loss_gan(Binding& params, const std::vector<VarD>& fake_stages, const std::vector<Matrix>& real_stages) {
  TapeD& tape = params.tape();
  std::vector<VarD> real;
  real.reserve(real_stages.size());
  for (const auto& m : real_stages) real.push_back(tape.constant(m));
  const double lo = kProbabilityFloor, hi = 1.0 - kProbabilityFloor;
  VarD fake_score = discriminator_score(params, fake_stages);
  VarD real_score = discriminator_score(params, real);
  VarD d2_loss = -(log_clamped(real_score, lo, hi) + log_clamped(one_minus(fake_score), lo, hi));
  VarD gen_loss = -log_clamped(fake_score, lo, hi);
  return {d2_loss, gen_loss};
}

GanLosses loss_gan(Binding& params, const AnticipationRollout& rollout, const std::vector<Matrix>& real_stages) {
  return loss_gan(params, rollout.features, real_stages);
}

VarD loss_cls(Binding& params, const VarD& aggregated, int label) {
  return cross_entropy(classifier_logits(params, aggregated), label);
}

// --- optimisation -----------------------------------------------------------

void SgdMomentum::step(ParamStore& params, const GradientMap& grads, const std::vector<std::string>& prefixes) {
  for (const auto& [name, g] : grads) {
    if (!has_prefix(name, prefixes)) continue;
    auto it = velocity_.find(name);
    if (it == velocity_.end()) it = velocity_.emplace(name, Matrix::Zero(g.rows(), g.cols())).first;
    it->second = momentum_ * it->second + g;
    params.values(name) -= lr_ * it->second;
  }
}

PhaseBTerms phase_b_losses(Binding& params, const ModelConfig& config, const TrainingExample& ex,
                           const AnticipationRollout& rollout, const LossTerms& terms) {
  const Clip& clip = *ex.clip;
  std::vector<VarD> parts;
  LossBundle values;
  if (terms.rec || terms.gan) {
    const auto targets = slice_stages(*ex.recognition, clip.agents, rollout.stage_times);
    if (terms.rec) {
      VarD l = loss_rec(rollout, targets);
      values.l_rec = l.scalar();
      parts.push_back(l);
    }
    if (terms.gan) {
      GanLosses g = loss_gan(params, rollout, targets);
      values.l_gan = g.gen_loss.scalar();
      values.d2_loss = g.d2_loss.scalar();
      parts.push_back(g.gen_loss);
    }
  }
  if (terms.cls) {
    VarD l = loss_cls(params, aggregate(rollout), clip.label);
    values.l_cls = l.scalar();
    parts.push_back(l);
  }
  if (terms.reg && config.position_autoencoder) {
    VarD l = loss_reg(rollout, stage_positions(clip, rollout.stage_times));
    values.l_reg = l.scalar();
    parts.push_back(l);
  }
  if (parts.empty()) throw UsageError("every loss term is disabled");
  return {add_n(parts), values};
}

PhaseBTerms phase_b_objective(Binding& params, const ModelConfig& config, const TrainingExample& ex,
                              const LossTerms& terms) {
  EncodedObservation enc = encode(params, *ex.clip, ex.t0, config.graph_epsilon);
  AnticipationRollout rollout = unroll(enc, config.stages, ex.t0, ex.clip->frames, params, config);
  return phase_b_losses(params, config, ex, rollout, terms);
}

double phase_b_value(const SramModel& model, std::span<const TrainingExample> batch, const LossTerms& terms) {
  double sum = 0;
  for (const auto& ex : batch) {
    TapeD tape;
    Binding bind(tape, model.params, false);
    sum += phase_b_objective(bind, model.config, ex, terms).total.scalar();
  }
  return sum / static_cast<double>(batch.size());
}

namespace {

// Generator forward for one example, kept alive across both phases.
struct GeneratorPass {
  TapeD tape;
  std::unique_ptr<Binding> bind;
  AnticipationRollout rollout;
};

}  // namespace

LossBundle train_step(SramModel& model, std::span<const TrainingExample> batch, SgdMomentum& d2_opt,
                      SgdMomentum& gen_opt, const TrainConfig& config) {
  if (!model.recognition_frozen) throw UsageError("train_step requires a frozen recognition model");
  if (batch.empty()) throw UsageError("train_step: empty batch");
  const ModelConfig& mc = model.config;
  const std::size_t n = batch.size();
  const double inv = 1.0 / static_cast<double>(n);
  LossBundle mean;

  // The generator output does not depend on D2, so one forward serves both phases.
  std::vector<std::unique_ptr<GeneratorPass>> passes(n);
  parallel_for(n, config.threads, [&](std::size_t i) {
    const TrainingExample& ex = batch[i];
    auto pass = std::make_unique<GeneratorPass>();
    pass->bind = std::make_unique<Binding>(pass->tape, model.params);
    EncodedObservation enc = encode(*pass->bind, *ex.clip, ex.t0, mc.graph_epsilon);
    pass->rollout = unroll(enc, mc.stages, ex.t0, ex.clip->frames, *pass->bind, mc);
    passes[i] = std::move(pass);
  });

  // Phase A: D2 against the current generator, with generated features held fixed.
  if (config.terms.gan) {
    std::vector<GradientMap> grads(n);
    std::vector<double> d2_losses(n);
    parallel_for(n, config.threads, [&](std::size_t i) {
      const TrainingExample& ex = batch[i];
      const AnticipationRollout& r = passes[i]->rollout;
      TapeD tape;
      Binding bind(tape, model.params);
      std::vector<VarD> fakes;
      for (const auto& f : r.features) fakes.push_back(tape.constant(f.value()));
      GanLosses g = loss_gan(bind, fakes, slice_stages(*ex.recognition, ex.clip->agents, r.stage_times));
      d2_losses[i] = g.d2_loss.scalar();
      grads[i] = backward(g.d2_loss, bind);
    });
    GradientMap sum;
    for (std::size_t i = 0; i < n; ++i) {
      accumulate(sum, grads[i], kPhaseAGroups);
      mean.d2_loss += d2_losses[i] * inv;
    }
    check_finite(mean, "phase A");
    scale_all(sum, inv);
    clip_norm(sum, config.grad_clip);
    d2_opt.step(model.params, sum, kPhaseAGroups);
  }

  // Phase B: generator and classifier against the updated D2.
  std::vector<GradientMap> grads(n);
  std::vector<LossBundle> parts(n);
  parallel_for(n, config.threads, [&](std::size_t i) {
    GeneratorPass& pass = *passes[i];
    PhaseBTerms t = phase_b_losses(*pass.bind, mc, batch[i], pass.rollout, config.terms);
    check_finite(t.values, "phase B");
    parts[i] = t.values;
    grads[i] = backward(t.total, *pass.bind);
    passes[i].reset();
  });
  GradientMap sum;
  for (std::size_t i = 0; i < n; ++i) {
    accumulate(sum, grads[i], kPhaseBGroups);
    mean.l_rec += parts[i].l_rec * inv;
    mean.l_gan += parts[i].l_gan * inv;
    mean.l_cls += parts[i].l_cls * inv;
    mean.l_reg += parts[i].l_reg * inv;
  }
  check_finite(mean, "phase B");
  scale_all(sum, inv);
  clip_norm(sum, config.grad_clip);
  gen_opt.step(model.params, sum, kPhaseBGroups);
  return mean;
}

History fit(SramModel& model, const Dataset& train, const Dataset* test, const TrainConfig& config) {
  if (train.clips.empty()) throw DataError("fit: empty training set");
  if (!model.recognition_frozen) throw UsageError("fit requires a frozen recognition model");
  if (config.batch_size < 1) throw UsageError("batch size must be positive");
  if (config.ratios.empty()) throw UsageError("no training observation ratios");

  std::vector<Matrix> recognition(train.clips.size());
  parallel_for(train.clips.size(), config.threads,
               [&](std::size_t i) { recognition[i] = recognition_features(model, train.clips[i]); });

  SgdMomentum d2_opt(config.learning_rate, config.momentum);
  SgdMomentum gen_opt(config.learning_rate, config.momentum);
  std::mt19937_64 rng(config.seed ^ 0x7A11ull);
  std::uniform_int_distribution<std::size_t> pick_ratio(0, config.ratios.size() - 1);
  std::vector<std::size_t> order(train.clips.size());
  std::iota(order.begin(), order.end(), 0);

  History history;
  for (Index e = 0; e < config.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.epoch = e + 1;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<TrainingExample> batch;
      batch.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Clip& clip = train.clips[order[i]];
        const Index t0 = observed_frames(config.ratios[pick_ratio(rng)], clip.frames);
        batch.push_back({&clip, t0, &recognition[order[i]]});
      }
      LossBundle b = train_step(model, batch, d2_opt, gen_opt, config);
      rec.losses.l_rec += b.l_rec;
      rec.losses.l_gan += b.l_gan;
      rec.losses.l_cls += b.l_cls;
      rec.losses.l_reg += b.l_reg;
      rec.losses.d2_loss += b.d2_loss;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    rec.losses.l_rec *= inv;
    rec.losses.l_gan *= inv;
    rec.losses.l_cls *= inv;
    rec.losses.l_reg *= inv;
    rec.losses.d2_loss *= inv;
    const bool last = e + 1 == config.epochs;
    const bool due = config.eval_every > 0 && (e + 1) % config.eval_every == 0;
    if (test && !test->clips.empty() && (due || last))
      rec.accuracy = evaluate(model, *test, config.eval_ratios, config.threads).rows;
    history.epochs.push_back(std::move(rec));
  }
  return history;
}

}  // namespace sram
