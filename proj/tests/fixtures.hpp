#pragma once

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

#include "sram/model.hpp"
#include "sram/synthetic_data.hpp"

namespace fixtures {

using namespace sram;

inline Matrix uniform(Index r, Index c, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Random clip with nonnegative features and positions inside a 10-unit arena.
inline Clip random_clip(Index agents, Index frames, Index feat_dim, std::mt19937_64& rng, int label = 0) {
  Clip c;
  c.label = label;
  c.agents = agents;
  c.frames = frames;
  c.features = uniform(frames * agents, feat_dim, 0, 1, rng);
  c.positions = uniform(frames * agents, 2, 0, 10, rng);
  c.normalized_positions = c.positions / 10.0;
  return c;
}

inline std::vector<Index> random_order(Index n, std::mt19937_64& rng) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Row (f, i) of the result is row (f, perm[i]) of `m`.
inline Matrix permute_frames(const Matrix& m, Index agents, const std::vector<Index>& perm) {
  Matrix out(m.rows(), m.cols());
  for (Index f = 0; f < m.rows() / agents; ++f)
    for (Index i = 0; i < agents; ++i) out.row(f * agents + i) = m.row(f * agents + perm[static_cast<std::size_t>(i)]);
  return out;
}

inline Clip permute_clip(const Clip& c, const std::vector<Index>& perm) {
  Clip p = c;
  p.features = permute_frames(c.features, c.agents, perm);
  p.positions = permute_frames(c.positions, c.agents, perm);
  p.normalized_positions = permute_frames(c.normalized_positions, c.agents, perm);
  return p;
}

inline ModelConfig small_config(Index feat_dim = 8, Index hidden = 16, Index stages = 3) {
  ModelConfig mc;
  mc.feat_dim = feat_dim;
  mc.hidden = hidden;
  mc.position_hidden = 8;
  mc.stages = stages;
  mc.discriminator_hidden = 12;
  return mc;
}

inline void zero_params(ParamStore& p, const std::string& prefix) {
  for (const auto& name : p.names())
    if (name.rfind(prefix, 0) == 0) p.values(name).setZero();
}

}  // namespace fixtures
