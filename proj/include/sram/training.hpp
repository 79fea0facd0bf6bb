#pragma once

// Four-term objective with alternating updates:
//   phase A: D2 descends  -[log D2(real) + log(1 - D2(fake))]
//   phase B: encoder, decoder and D1 descend  L_rec + (-log D2(fake)) + L_cls + L_reg
// The recognition model F supplies the real stage features and stays frozen.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sram/model.hpp"
#include "sram/sequential_decoder.hpp"

namespace sram {

inline constexpr double kProbabilityFloor = 1e-7;

struct LossTerms {
  bool rec = true;
  bool gan = true;
  bool cls = true;
  bool reg = true;
};

struct LossBundle {
  double l_rec = 0;
  double l_gan = 0;  // generator side, -log D2(fake)
  double l_cls = 0;
  double l_reg = 0;
  double d2_loss = 0;

  double total() const { return l_rec + l_gan + l_cls + l_reg; }
};

std::vector<double> default_ratios();

struct TrainConfig {
  Index epochs = 30;
  Index recognition_epochs = 30;
  double learning_rate = 0.01;
  double momentum = 0.9;
  Index batch_size = 32;
  // Global L2 norm cap on each batch gradient; 0 disables clipping.
  double grad_clip = 5.0;
  std::uint64_t seed = 7;
  LossTerms terms;
  std::vector<double> ratios = default_ratios();  // sampled per example during training
  std::vector<double> eval_ratios = default_ratios();
  Index eval_every = 1;  // epochs between test sweeps in the history; 0 = final epoch only
  int threads = 1;
};

// --- recognition model F -------------------------------------------------

// Last-layer features of F for every frame of the clip, (T*N) x h.
VarD recognition_forward(Binding& params, const Clip& clip, double epsilon);
VarD recognition_logits(Binding& params, const Clip& clip, double epsilon);

// Trains F on full clips, then freezes it. Returns the mean loss per epoch.
std::vector<double> train_recognition(SramModel& model, const Dataset& full_clips, const TrainConfig& config);
double recognition_accuracy(const SramModel& model, const Dataset& data);

Matrix recognition_features(const SramModel& model, const Clip& clip);

// F's per-agent features at 1-based frames tau_1..tau_K, each N x h.
std::vector<Matrix> slice_stages(const Matrix& per_frame, Index agents, std::span<const Index> stage_times);
std::vector<Matrix> recognition_targets(const SramModel& model, const Clip& clip, std::span<const Index> stage_times);

// Normalized ground-truth positions at each stage time.
std::vector<Matrix> stage_positions(const Clip& clip, std::span<const Index> stage_times);

// --- discriminators -------------------------------------------------------

VarD classifier_logits(Binding& params, const VarD& aggregated);
// Stage-averaged D2 probability of `stage_features` being real (1 x 1).
VarD discriminator_score(Binding& params, const std::vector<VarD>& stage_features);

// --- loss terms -----------------------------------------------------------

VarD loss_rec(const AnticipationRollout& rollout, const std::vector<Matrix>& targets);
VarD loss_reg(const AnticipationRollout& rollout, const std::vector<Matrix>& positions);

struct GanLosses {
  VarD d2_loss;
  VarD gen_loss;
};
GanLosses loss_gan(Binding& params, const std::vector<VarD>& fake_stages, const std::vector<Matrix>& real_stages);
GanLosses loss_gan(Binding& params, const AnticipationRollout& rollout, const std::vector<Matrix>& real_stages);

VarD loss_cls(Binding& params, const VarD& aggregated, int label);

// --- optimisation ---------------------------------------------------------

class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum) : lr_(learning_rate), momentum_(momentum) {}

  // Updates only parameters whose name starts with one of `prefixes`.
  void step(ParamStore& params, const GradientMap& grads, const std::vector<std::string>& prefixes);

  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double momentum_;
  std::map<std::string, Matrix> velocity_;
};

struct TrainingExample {
  const Clip* clip = nullptr;
  Index t0 = 1;
  const Matrix* recognition = nullptr;  // cached F features for all frames
};

// Phase-B objective and its parts for one example, on the given binding.
struct PhaseBTerms {
  VarD total;
  LossBundle values;
};
PhaseBTerms phase_b_objective(Binding& params, const ModelConfig& config, const TrainingExample& ex,
                              const LossTerms& terms);

// Batch-mean phase-B objective without any update.
double phase_b_value(const SramModel& model, std::span<const TrainingExample> batch, const LossTerms& terms);

// One alternating update on `batch`: phase A moves D2, phase B moves E, D and D1.
LossBundle train_step(SramModel& model, std::span<const TrainingExample> batch, SgdMomentum& d2_opt,
                      SgdMomentum& gen_opt, const TrainConfig& config);

struct EpochRecord {
  Index epoch = 0;
  LossBundle losses;
  std::vector<std::pair<double, double>> accuracy;  // (ratio, test accuracy); empty if not evaluated
};

struct History {
  std::vector<EpochRecord> epochs;
};

// Trains encoder, decoder and discriminators with a frozen recognition model.
History fit(SramModel& model, const Dataset& train, const Dataset* test, const TrainConfig& config);

}  // namespace sram
