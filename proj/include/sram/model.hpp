#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "sram/tensor.hpp"

namespace sram {

// How the decoder turns latent codes into 2-d positions.
enum class PositionHead {
  kLinear,  // no activation on the 2-d output
  kRelu,    // ReLU on each branch, matching the printed decoder equation
};

std::string to_string(PositionHead head);
PositionHead position_head_from_string(const std::string& s);

struct ModelConfig {
  Index feat_dim = 16;
  Index hidden = 256;
  Index position_hidden = 64;
  Index stages = 5;
  Index classes = 6;
  Index discriminator_hidden = 128;
  double graph_epsilon = 1e-3;
  PositionHead position_head = PositionHead::kLinear;
  // When false the position auto-encoder is bypassed and every stage reuses
  // the last observed positions (used by the "no-reg" ablation).
  bool position_autoencoder = true;
};

// Parameter groups, by name prefix.
inline constexpr const char* kEncoderPrefix = "enc.";
inline constexpr const char* kActivityPrefix = "act.";
inline constexpr const char* kPositionPrefix = "pos.";
inline constexpr const char* kClassifierPrefix = "d1.";
inline constexpr const char* kDiscriminatorPrefix = "d2.";
inline constexpr const char* kRecognitionPrefix = "rec.";

// All learnable state: observation encoder, both auto-encoders, the classifier
// D1, the discriminator D2 and the recognition model F.
struct SramModel {
  ModelConfig config;
  ParamStore params;
  bool recognition_frozen = false;
};

// Glorot-uniform weights, zero biases.
SramModel init_model(const ModelConfig& config, std::uint64_t seed);

// Adds the parameters of a two-layer ST-GCN under `prefix` ("enc" / "rec").
void add_stgcn_params(ParamStore& store, const std::string& prefix, Index d_in, Index hidden, std::mt19937_64& rng);

void save_model(const SramModel& model, const std::string& path);
SramModel load_model(const std::string& path);

std::string model_to_json(const SramModel& model);
SramModel model_from_json(const std::string& text);

}  // namespace sram
