#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "sram/training.hpp"

namespace sram {

// t0 = max(1, round(ratio * T)); ratio must lie in (0, 1].
Index observed_frames(double ratio, Index frames);

// D1 logits (1 x C) for the clip observed up to frame t0.
Matrix predict_logits(const SramModel& model, const Clip& clip, Index t0);

// Argmax, ties to the lowest class index.
int argmax_class(const Matrix& logits);

struct RatioSweepResult {
  std::vector<std::pair<double, double>> rows;  // (ratio, accuracy), ascending ratio
  double mean = 0;
};

RatioSweepResult evaluate(const SramModel& model, const Dataset& data, std::vector<double> ratios, int threads = 1);

struct PositionMetrics {
  double fde = 0;
  double ade = 0;
};

// Displacement errors in raw arena units for per-stage predictions given in
// normalized coordinates. FDE uses the last stage (frame T); ADE averages all stages.
struct DisplacementSums {
  double final_sum = 0;
  double average_sum = 0;
  Index count = 0;  // number of agent trajectories
};
DisplacementSums displacement_errors(const std::vector<Matrix>& predicted, const Clip& clip,
                                     std::span<const Index> stage_times, double arena);

// Positions anticipated by the model at each stage (normalized).
std::vector<Matrix> predict_positions(const SramModel& model, const Clip& clip, Index t0);

// Empty `classes` means every clip.
PositionMetrics position_metrics(const SramModel& model, const Dataset& data, double ratio,
                                 const std::vector<std::string>& classes = {});
// Same evaluation path with every stage predicting the last observed positions.
PositionMetrics persistence_metrics(const Dataset& data, double ratio, Index stages,
                                    const std::vector<std::string>& classes = {});

// Gradient check of the phase-B objective on a tiny instance
// (N=3, t0=4, K=2, D=8, hidden=16). Returns the max relative error.
double phase_b_gradcheck(std::uint64_t seed);

// --- ablations ------------------------------------------------------------

struct Variant {
  std::string name;
  ModelConfig model;
  LossTerms terms;
};

// One of full, no-reg, no-gan, no-rec, K=<n>.
Variant make_variant(const std::string& name, const ModelConfig& base);

// Trains variant `v` from config.seed, copying the frozen recognition model
// from `recognition_source`.
SramModel train_variant(const SramModel& recognition_source, const Variant& v, const Dataset& train,
                        const TrainConfig& config, History* history = nullptr);

struct AblationRow {
  std::string variant;
  double acc_10 = 0, acc_40 = 0, acc_70 = 0;
  double mean = 0;  // over the ten ratios 0.1..1.0
};

// Trains every variant from the same seed (sharing one recognition model) and
// evaluates it on `test`.
std::vector<AblationRow> ablate(const Dataset& train, const Dataset& test, const std::vector<std::string>& variants,
                                const ModelConfig& base, const TrainConfig& config);

// --- CSV ------------------------------------------------------------------

void write_sweep_csv(std::ostream& out, const RatioSweepResult& r);
void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);
void write_position_csv(std::ostream& out, const std::vector<std::pair<std::string, PositionMetrics>>& rows);
void write_history_csv(std::ostream& out, const History& h);

}  // namespace sram
