#pragma once

#include <string>
#include <vector>

#include "sram/relation_graphs.hpp"
#include "sram/synthetic_data.hpp"
#include "sram/tape.hpp"

namespace sram {

using VarD = Var<double>;
using TapeD = Tape<double>;
using Binding = ParamBinding<double>;

// One ST-GCN layer: spatial graph convolution on both relation graphs,
// then a length-3 temporal convolution (stride 1, zero padded).
struct StgcnLayerParams {
  VarD w_position, b_position;
  VarD w_action, b_action;
  VarD kernel, kernel_bias;  // kernel is [3, h, h] stacked as (3h x h)

  static StgcnLayerParams bind(Binding& params, const std::string& prefix);
};

struct EncodedObservation {
  VarD z0;              // N x h, temporal mean of the last layer
  VarD seed_features;   // N x h, last layer at frame t0
  VarD seed_positions;  // N x 2, observed positions at frame t0 (normalized)
};

// Relation graphs of frames [0, count) built from raw features and normalized positions.
std::vector<RelationGraphs> frame_graphs(const Clip& clip, Index count, double epsilon);

// x_seq is (t*N) x d_in, frame-stacked; returns (t*N) x h.
VarD stgcn_layer(const VarD& x_seq, const std::vector<RelationGraphs>& graphs, const StgcnLayerParams& layer,
                 Index agents);

// Two ST-GCN layers under `prefix` (e.g. "enc" or "rec") over frames [0, count).
VarD stgcn_forward(Binding& params, const std::string& prefix, const Clip& clip, Index count, double epsilon);

// Encodes the first t0 frames.
EncodedObservation encode(Binding& params, const Clip& clip, Index t0, double epsilon = kDefaultGraphEpsilon);

}  // namespace sram
