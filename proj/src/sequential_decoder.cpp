#include "sram/sequential_decoder.hpp"

#include <cmath>

namespace sram {

namespace {

// relu(G X W + b)
VarD graph_conv(const VarD& g, const VarD& x, const VarD& w, const VarD& b) {
  return relu(add_row(matmul(g, matmul(x, w)), b));
}

VarD graph_linear(const VarD& g, const VarD& x, const VarD& w, const VarD& b) {
  return add_row(matmul(g, matmul(x, w)), b);
}

}  // namespace

ActivityAEParams ActivityAEParams::bind(Binding& params) {
  return {params("act.u_ep"), params("act.b_ep"), params("act.u_ea"), params("act.b_ea"),
          params("act.u_da"), params("act.b_da"), params("act.u_dp"), params("act.b_dp")};
}

PositionAEParams PositionAEParams::bind(Binding& params) {
  return {params("pos.v_ep1"), params("pos.b_ep1"), params("pos.v_ea1"), params("pos.b_ea1"),
          params("pos.v_ep2"), params("pos.b_ep2"), params("pos.v_ea2"), params("pos.b_ea2"),
          params("pos.v_da"),  params("pos.b_da"),  params("pos.v_dp"),  params("pos.b_dp")};
}

ActivityStep activity_step(const VarD& x_hat, const StageGraphs& graphs, const VarD& z0, const ActivityAEParams& p) {
  VarD z_a = graph_conv(graphs.position, x_hat, p.u_ep, p.b_ep) + graph_conv(graphs.action, x_hat, p.u_ea, p.b_ea);
  VarD s = z0 + z_a;
  // Graph/weight pairing is swapped relative to the encoding half.
  VarD x_next = graph_conv(graphs.action, s, p.u_da, p.b_da) + graph_conv(graphs.position, s, p.u_dp, p.b_dp);
  return {z_a, x_next};
}

PositionStep position_step(const VarD& b_hat, const StageGraphs& graphs, const VarD& z0, const PositionAEParams& p,
                           PositionHead head) {
  VarD h1 = graph_conv(graphs.position, b_hat, p.v_ep1, p.b_ep1) + graph_conv(graphs.action, b_hat, p.v_ea1, p.b_ea1);
  VarD z_p = graph_conv(graphs.position, h1, p.v_ep2, p.b_ep2) + graph_conv(graphs.action, h1, p.v_ea2, p.b_ea2);
  VarD s = z0 + z_p;
  VarD b_next = head == PositionHead::kLinear
                    ? graph_linear(graphs.action, s, p.v_da, p.b_da) + graph_linear(graphs.position, s, p.v_dp, p.b_dp)
                    : graph_conv(graphs.action, s, p.v_da, p.b_da) + graph_conv(graphs.position, s, p.v_dp, p.b_dp);
  return {z_p, b_next};
}

std::vector<Index> stage_times(Index t0, Index frames, Index stages) {
  if (stages < 1) throw UsageError("number of unrolling stages must be at least 1");
  if (t0 < 1 || t0 > frames) throw DimensionError("observed frames outside [1, T]");
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(stages));
  for (Index k = 1; k <= stages; ++k) {
    const double tau = static_cast<double>(t0) + static_cast<double>(k * (frames - t0)) / static_cast<double>(stages);
    out.push_back(static_cast<Index>(std::lround(tau)));
  }
  out.back() = frames;
  return out;
}

AnticipationRollout unroll(const EncodedObservation& enc, Index stages, Index t0, Index frames, Binding& params,
                           const ModelConfig& config) {
  AnticipationRollout r;
  r.stage_times = stage_times(t0, frames, stages);
  const ActivityAEParams act = ActivityAEParams::bind(params);
  PositionAEParams pos;
  if (config.position_autoencoder) pos = PositionAEParams::bind(params);

  VarD x = enc.seed_features;
  VarD b = enc.seed_positions;
  for (Index k = 0; k < stages; ++k) {
    StageGraphs graphs = build_graphs(x, b, config.graph_epsilon);
    ActivityStep a = activity_step(x, graphs, enc.z0, act);
    ++r.activity_steps;
    VarD b_next = enc.seed_positions;
    if (config.position_autoencoder) {
      b_next = position_step(b, graphs, enc.z0, pos, config.position_head).b_next;
      ++r.position_steps;
    }
    r.features.push_back(a.x_next);
    r.positions.push_back(b_next);
    r.stage_graphs.push_back(graphs);
    x = a.x_next;
    b = b_next;
  }
  return r;
}

VarD aggregate(const AnticipationRollout& rollout) {
  if (rollout.features.empty()) throw DimensionError("aggregate: empty rollout");
  return colmax(rollout.features.back());
}

}  // namespace sram
