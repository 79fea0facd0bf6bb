#include "sram/observation_encoder.hpp"

namespace sram {

StgcnLayerParams StgcnLayerParams::bind(Binding& params, const std::string& prefix) {
  return {params(prefix + ".w_p"), params(prefix + ".b_p"),   params(prefix + ".w_a"),
          params(prefix + ".b_a"), params(prefix + ".kernel"), params(prefix + ".kernel_b")};
}

std::vector<RelationGraphs> frame_graphs(const Clip& clip, Index count, double epsilon) {
  if (count < 1 || count > clip.frames)
    throw DimensionError("frame count " + std::to_string(count) + " outside [1," + std::to_string(clip.frames) + "]");
  std::vector<RelationGraphs> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index f = 0; f < count; ++f)
    out.push_back(build_graphs(clip.frame_features(f), clip.frame_normalized_positions(f), epsilon));
  return out;
}

VarD stgcn_layer(const VarD& x_seq, const std::vector<RelationGraphs>& graphs, const StgcnLayerParams& layer,
                 Index agents) {
  if (graphs.empty()) throw DimensionError("stgcn_layer: need at least one frame");
  if (static_cast<Index>(graphs.size()) * agents != x_seq.rows())
    throw DimensionError("stgcn_layer: one relation graph pair per frame is required");
  std::vector<Matrix> g_action, g_position;
  g_action.reserve(graphs.size());
  g_position.reserve(graphs.size());
  for (const auto& g : graphs) {
    g_action.push_back(g.action);
    g_position.push_back(g.position);
  }
  // G X W is evaluated as G (X W) so the weight product runs once over all frames.
  VarD spatial = relu(add_row(block_left_mul(g_position, matmul(x_seq, layer.w_position)), layer.b_position)) +
                 relu(add_row(block_left_mul(g_action, matmul(x_seq, layer.w_action)), layer.b_action));
  return relu(add_row(matmul(temporal_stack(spatial, agents), layer.kernel), layer.kernel_bias));
}

VarD stgcn_forward(Binding& params, const std::string& prefix, const Clip& clip, Index count, double epsilon) {
  const auto graphs = frame_graphs(clip, count, epsilon);
  TapeD& tape = params.tape();
  VarD x = tape.constant(clip.features.topRows(count * clip.agents));
  VarD h1 = stgcn_layer(x, graphs, StgcnLayerParams::bind(params, prefix + ".l1"), clip.agents);
  return stgcn_layer(h1, graphs, StgcnLayerParams::bind(params, prefix + ".l2"), clip.agents);
}

EncodedObservation encode(Binding& params, const Clip& clip, Index t0, double epsilon) {
  if (t0 < 1) throw DimensionError("encode: empty observation prefix");
  VarD out = stgcn_forward(params, "enc", clip, t0, epsilon);
  const Index n = clip.agents;
  TapeD& tape = params.tape();
  return {frame_mean(out, n), row_block(out, (t0 - 1) * n, n),
          tape.constant(clip.frame_normalized_positions(t0 - 1))};
}

}  // namespace sram
