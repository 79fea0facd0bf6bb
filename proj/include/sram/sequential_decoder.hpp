#pragma once

// K-stage anticipation of group features and agent positions. Each stage
// builds fresh relation graphs from the current estimates and runs two
// graph auto-encoders that share those graphs and the observation code z0:
//
//   activity:  z_a  = relu(Gp X U_ep) + relu(Ga X U_ea)
//              X'   = relu(Ga (z0 + z_a) U_da) + relu(Gp (z0 + z_a) U_dp)
//   position:  z_p  = two graph-convolution layers 2 -> 64 -> h on B
//              B'   = Ga (z0 + z_p) V_da + Gp (z0 + z_p) V_dp      (linear head)

#include <vector>

#include "sram/model.hpp"
#include "sram/observation_encoder.hpp"

namespace sram {

using StageGraphs = BasicRelationGraphs<VarD>;

struct ActivityAEParams {
  VarD u_ep, b_ep, u_ea, b_ea;
  VarD u_da, b_da, u_dp, b_dp;

  static ActivityAEParams bind(Binding& params);
};

struct PositionAEParams {
  VarD v_ep1, b_ep1, v_ea1, b_ea1;  // 2 -> position_hidden
  VarD v_ep2, b_ep2, v_ea2, b_ea2;  // position_hidden -> hidden
  VarD v_da, b_da, v_dp, b_dp;      // hidden -> 2

  static PositionAEParams bind(Binding& params);
};

struct ActivityStep {
  VarD z_a;
  VarD x_next;
};

struct PositionStep {
  VarD z_p;
  VarD b_next;
};

struct AnticipationRollout {
  std::vector<VarD> features;   // stage k holds the decoder output X_{k+1}, N x h
  std::vector<VarD> positions;  // stage k holds B_{k+1}, N x 2 (normalized)
  std::vector<StageGraphs> stage_graphs;
  std::vector<Index> stage_times;  // 1-based frame index per stage; last == T
  int activity_steps = 0;
  int position_steps = 0;
};

ActivityStep activity_step(const VarD& x_hat, const StageGraphs& graphs, const VarD& z0, const ActivityAEParams& p);

PositionStep position_step(const VarD& b_hat, const StageGraphs& graphs, const VarD& z0, const PositionAEParams& p,
                           PositionHead head = PositionHead::kLinear);

// tau_k = round(t0 + k (T - t0) / K), k = 1..K (half-way cases round up).
std::vector<Index> stage_times(Index t0, Index frames, Index stages);

AnticipationRollout unroll(const EncodedObservation& enc, Index stages, Index t0, Index frames, Binding& params,
                           const ModelConfig& config);

// Column-wise max over agents of the last stage's features (1 x h).
VarD aggregate(const AnticipationRollout& rollout);

}  // namespace sram
