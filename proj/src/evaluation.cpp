#include "sram/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include "sram/gradcheck.hpp"
#include "sram/parallel.hpp"

namespace sram {

namespace {

bool selected(const Dataset& data, const Clip& clip, const std::vector<std::string>& classes) {
  if (classes.empty()) return true;
  const std::string& name = data.classes[static_cast<std::size_t>(clip.label)];
  return std::find(classes.begin(), classes.end(), name) != classes.end();
}

PositionMetrics finish(const DisplacementSums& s) {
  if (s.count == 0) return {};
  return {s.final_sum / static_cast<double>(s.count), s.average_sum / static_cast<double>(s.count)};
}

void add(DisplacementSums& into, const DisplacementSums& s) {
  into.final_sum += s.final_sum;
  into.average_sum += s.average_sum;
  into.count += s.count;
}

}  // namespace

Index observed_frames(double ratio, Index frames) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw UsageError("observation ratio must lie in (0, 1]");
  return std::max<Index>(1, static_cast<Index>(std::lround(ratio * static_cast<double>(frames))));
}

Matrix predict_logits(const SramModel& model, const Clip& clip, Index t0) {
  TapeD tape;
  Binding bind(tape, model.params, false);
  EncodedObservation enc = encode(bind, clip, t0, model.config.graph_epsilon);
  AnticipationRollout r = unroll(enc, model.config.stages, t0, clip.frames, bind, model.config);
  return classifier_logits(bind, aggregate(r)).value();
}

int argmax_class(const Matrix& logits) {
  Index best = 0;
  for (Index c = 1; c < logits.cols(); ++c)
    if (logits(0, c) > logits(0, best)) best = c;
  return static_cast<int>(best);
}

RatioSweepResult evaluate(const SramModel& model, const Dataset& data, std::vector<double> ratios, int threads) {
  if (ratios.empty()) throw UsageError("no observation ratios to evaluate");
  for (double r : ratios) observed_frames(r, 1);
  std::sort(ratios.begin(), ratios.end());
  RatioSweepResult out;
  for (double ratio : ratios) {
    std::vector<char> hit(data.clips.size(), 0);
    parallel_for(data.clips.size(), threads, [&](std::size_t i) {
      const Clip& clip = data.clips[i];
      hit[i] = argmax_class(predict_logits(model, clip, observed_frames(ratio, clip.frames))) == clip.label;
    });
    const auto correct = std::count(hit.begin(), hit.end(), 1);
    const double acc = data.clips.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(data.clips.size());
    out.rows.emplace_back(ratio, acc);
    out.mean += acc / static_cast<double>(ratios.size());
  }
  return out;
}

DisplacementSums displacement_errors(const std::vector<Matrix>& predicted, const Clip& clip,
                                     std::span<const Index> stage_times, double arena) {
  if (predicted.size() != stage_times.size() || predicted.empty())
    throw DimensionError("displacement_errors: one prediction per stage is required");
  const auto truth = stage_positions(clip, stage_times);
  DisplacementSums s;
  s.count = clip.agents;
  const double k = static_cast<double>(predicted.size());
  for (std::size_t st = 0; st < predicted.size(); ++st) {
    const Eigen::VectorXd dist = ((predicted[st] - truth[st]) * arena).rowwise().norm();
    s.average_sum += dist.sum() / k;
    if (st + 1 == predicted.size()) s.final_sum += dist.sum();
  }
  return s;
}

std::vector<Matrix> predict_positions(const SramModel& model, const Clip& clip, Index t0) {
  TapeD tape;
  Binding bind(tape, model.params, false);
  EncodedObservation enc = encode(bind, clip, t0, model.config.graph_epsilon);
  AnticipationRollout r = unroll(enc, model.config.stages, t0, clip.frames, bind, model.config);
  std::vector<Matrix> out;
  for (const auto& p : r.positions) out.push_back(p.value());
  return out;
}

PositionMetrics position_metrics(const SramModel& model, const Dataset& data, double ratio,
                                 const std::vector<std::string>& classes) {
  DisplacementSums total;
  for (const auto& clip : data.clips) {
    if (!selected(data, clip, classes)) continue;
    const Index t0 = observed_frames(ratio, clip.frames);
    const auto times = stage_times(t0, clip.frames, model.config.stages);
    add(total, displacement_errors(predict_positions(model, clip, t0), clip, times, data.arena));
  }
  return finish(total);
}

PositionMetrics persistence_metrics(const Dataset& data, double ratio, Index stages,
                                    const std::vector<std::string>& classes) {
  DisplacementSums total;
  for (const auto& clip : data.clips) {
    if (!selected(data, clip, classes)) continue;
    const Index t0 = observed_frames(ratio, clip.frames);
    const auto times = stage_times(t0, clip.frames, stages);
    const std::vector<Matrix> held(times.size(), clip.frame_normalized_positions(t0 - 1));
    add(total, displacement_errors(held, clip, times, data.arena));
  }
  return finish(total);
}

double phase_b_gradcheck(std::uint64_t seed) {
  DatasetSpec spec;
  spec.n_clips = 1;
  spec.agents = 3;
  spec.frames = 8;
  spec.feat_dim = 8;
  spec.seed = seed;
  const Dataset data = generate_dataset(spec);

  ModelConfig mc;
  mc.feat_dim = 8;
  mc.hidden = 16;
  mc.stages = 2;
  mc.classes = static_cast<Index>(data.classes.size());
  SramModel model = init_model(mc, seed);
  model.recognition_frozen = true;
  const Matrix rec = recognition_features(model, data.clips[0]);
  const TrainingExample ex{&data.clips[0], 4, &rec};

  Objective<double> f = [&](Binding& b) { return phase_b_objective(b, mc, ex, LossTerms{}).total; };
  return finite_diff_check(f, model.params);
}

Variant make_variant(const std::string& name, const ModelConfig& base) {
  Variant v{name, base, {}};
  if (name == "full") return v;
  if (name == "no-reg") {
    v.terms.reg = false;
    v.model.position_autoencoder = false;
    return v;
  }
  if (name == "no-gan") {
    v.terms.gan = false;
    return v;
  }
  if (name == "no-rec") {
    v.terms.rec = false;
    return v;
  }
  if (name.rfind("K=", 0) == 0) {
    try {
      std::size_t used = 0;
      const int k = std::stoi(name.substr(2), &used);
      if (used == name.size() - 2 && k >= 1) {
        v.model.stages = k;
        return v;
      }
    } catch (const std::exception&) {
    }
  }
  throw UsageError("unknown ablation variant: " + name);
}

SramModel train_variant(const SramModel& recognition_source, const Variant& v, const Dataset& train,
                        const TrainConfig& config, History* history) {
  if (!recognition_source.recognition_frozen) throw UsageError("train_variant needs a trained recognition model");
  SramModel m = init_model(v.model, config.seed);
  for (const auto& name : recognition_source.params.names())
    if (name.rfind(kRecognitionPrefix, 0) == 0) m.params.assign(name, recognition_source.params.at(name).matrix());
  m.recognition_frozen = true;
  TrainConfig tc = config;
  tc.terms = v.terms;
  History h = fit(m, train, nullptr, tc);
  if (history) *history = std::move(h);
  return m;
}

std::vector<AblationRow> ablate(const Dataset& train, const Dataset& test, const std::vector<std::string>& variants,
                                const ModelConfig& base, const TrainConfig& config) {
  if (variants.empty()) throw UsageError("no ablation variants given");
  std::vector<Variant> parsed;
  for (const auto& name : variants) parsed.push_back(make_variant(name, base));

  // The recognition model does not depend on the variant, so it is trained once.
  SramModel reference = init_model(base, config.seed);
  train_recognition(reference, train, config);

  std::vector<AblationRow> rows;
  for (const auto& v : parsed) {
    const SramModel m = train_variant(reference, v, train, config);
    const RatioSweepResult sweep = evaluate(m, test, default_ratios(), config.threads);
    AblationRow row;
    row.variant = v.name;
    for (const auto& [ratio, acc] : sweep.rows) {
      if (std::abs(ratio - 0.1) < 1e-9) row.acc_10 = acc;
      if (std::abs(ratio - 0.4) < 1e-9) row.acc_40 = acc;
      if (std::abs(ratio - 0.7) < 1e-9) row.acc_70 = acc;
    }
    row.mean = sweep.mean;
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(std::ostream& out, const RatioSweepResult& r) {
  out << "ratio,accuracy\n";
  for (const auto& [ratio, acc] : r.rows) out << ratio << "," << std::fixed << std::setprecision(6) << acc << std::defaultfloat << "\n";
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "variant,acc@0.1,acc@0.4,acc@0.7,mean\n" << std::fixed << std::setprecision(6);
  for (const auto& r : rows) out << r.variant << "," << r.acc_10 << "," << r.acc_40 << "," << r.acc_70 << "," << r.mean << "\n";
  out << std::defaultfloat;
}

void write_position_csv(std::ostream& out, const std::vector<std::pair<std::string, PositionMetrics>>& rows) {
  out << "method,fde,ade\n" << std::fixed << std::setprecision(6);
  for (const auto& [name, m] : rows) out << name << "," << m.fde << "," << m.ade << "\n";
  out << std::defaultfloat;
}

void write_history_csv(std::ostream& out, const History& h) {
  out << "epoch,l_rec,l_gan,l_cls,l_reg,d2_loss";
  const EpochRecord* with_acc = nullptr;
  for (const auto& e : h.epochs)
    if (!e.accuracy.empty()) with_acc = &e;
  if (with_acc)
    for (const auto& [ratio, acc] : with_acc->accuracy) out << ",acc@" << std::setprecision(2) << ratio;
  out << "\n" << std::fixed << std::setprecision(6);
  for (const auto& e : h.epochs) {
    out << e.epoch << "," << e.losses.l_rec << "," << e.losses.l_gan << "," << e.losses.l_cls << "," << e.losses.l_reg
        << "," << e.losses.d2_loss;
    if (with_acc) {
      if (e.accuracy.empty())
        for (std::size_t i = 0; i < with_acc->accuracy.size(); ++i) out << ",";
      else
        for (const auto& [ratio, acc] : e.accuracy) out << "," << acc;
    }
    out << "\n";
  }
  out << std::defaultfloat;
}

}  // namespace sram
