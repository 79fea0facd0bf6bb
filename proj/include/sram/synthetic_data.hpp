#pragma once

// Deterministic multi-agent group-activity simulator.
//
// Every clip starts with an ambiguity window of ceil(rho * T) frames in which
// all agents mill about regardless of the class; the class dynamics only take
// over afterwards. Features are a frozen random projection of per-agent
// kinematics, so neither absolute position nor the label reaches them.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "sram/tensor.hpp"

namespace sram {

inline const std::array<std::string, 6> kActivityNames = {"converge", "disperse", "follow",
                                                          "queue",    "orbit",    "mill"};
inline constexpr Index kKinematicDim = 8;

enum class Split { kTrain, kTest };

struct DatasetSpec {
  std::vector<std::string> classes{kActivityNames.begin(), kActivityNames.end()};
  Index n_clips = 2400;
  Index agents = 6;
  Index frames = 20;
  Index feat_dim = 16;
  double arena = 10.0;
  double ambiguity = 0.3;
  double speed = 0.4;
  double position_noise = 0.05;
  double feature_noise = 0.1;
  std::uint64_t seed = 7;
  Split split = Split::kTrain;
};

// One clip; frame f of a per-agent quantity lives in rows [f*agents, (f+1)*agents).
struct Clip {
  int label = 0;
  Index frames = 0;
  Index agents = 0;
  Matrix positions;             // raw arena units, (frames*agents) x 2
  Matrix features;              // (frames*agents) x feat_dim
  Matrix normalized_positions;  // positions / arena, what the model consumes

  auto frame_positions(Index f) const { return positions.middleRows(f * agents, agents); }
  auto frame_normalized_positions(Index f) const { return normalized_positions.middleRows(f * agents, agents); }
  auto frame_features(Index f) const { return features.middleRows(f * agents, agents); }
};

struct Dataset {
  std::vector<std::string> classes;
  Index agents = 0;
  Index frames = 0;
  Index feat_dim = 0;
  double arena = 10.0;
  Matrix projection;  // feat_dim x 8
  RowVector bias;     // 1 x feat_dim
  std::vector<Clip> clips;

  Index num_classes() const { return static_cast<Index>(classes.size()); }
};

// Number of leading frames in which every class follows mill dynamics.
Index ambiguity_frames(const DatasetSpec& spec);

// Index of `name` in kActivityNames; throws UsageError for unknown names.
int activity_index(const std::string& name);

// Frozen feature map (projection, bias) derived from spec.seed only, so train
// and test splits of the same seed share it.
std::pair<Matrix, RowVector> feature_map(const DatasetSpec& spec);

// Positions (raw arena units) for one clip of class `activity`, frame-stacked.
Matrix simulate_clip(const std::string& activity, const DatasetSpec& spec, std::mt19937_64& rng);

// Per-agent kinematic descriptors (frames*agents) x 8:
// (v_x, v_y, |v|, cos heading, sin heading, distance to centroid, unit vector to centroid).
Matrix kinematics(const Matrix& positions, Index agents);

Matrix featurize(const Matrix& positions, Index agents, const Matrix& projection, const RowVector& bias,
                 double feature_noise, std::mt19937_64& rng);

// Random stream for clip `index` of `split`; independent of generation order.
std::mt19937_64 clip_rng(std::uint64_t seed, Split split, Index index);

Dataset generate_dataset(const DatasetSpec& spec);

// Fills normalized_positions from positions / arena.
void normalize_positions(Dataset& data);

std::string dataset_to_json(const Dataset& data);
Dataset dataset_from_json(const std::string& text);
void write_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace sram
