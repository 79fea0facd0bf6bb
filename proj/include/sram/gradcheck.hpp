#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "sram/tape.hpp"

namespace sram {

template <typename Scalar>
using Objective = std::function<Var<Scalar>(ParamBinding<Scalar>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  // Uniform perturbation applied to every parameter before checking, so that
  // no ReLU pre-activation sits exactly on its kink. Zero disables it.
  double jitter = 0.0;
  std::uint64_t jitter_seed = 0;
};

// Compares reverse-mode gradients of `f` against central differences and
// returns max |analytic - numeric| / max(1, |analytic|, |numeric|) over every
// coordinate of every parameter. `params` is restored before returning
// (apart from the jitter, which is kept).
template <typename Scalar>
Scalar finite_diff_check(const Objective<Scalar>& f, BasicParamStore<Scalar>& params,
                         const GradCheckOptions& opt = {}) {
  if (opt.jitter > 0) {
    std::mt19937_64 rng(opt.jitter_seed);
    std::uniform_real_distribution<double> u(-opt.jitter, opt.jitter);
    for (const auto& name : params.names())
      for (Index i = 0; i < params.values(name).size(); ++i)
        params.values(name).data()[i] += static_cast<Scalar>(u(rng));
  }

  std::map<std::string, MatrixX<Scalar>> analytic;
  {
    Tape<Scalar> tape;
    ParamBinding<Scalar> bind(tape, params);
    Var<Scalar> loss = f(bind);
    analytic = backward(loss, bind);
  }

  auto evaluate = [&]() {
    Tape<Scalar> tape;
    ParamBinding<Scalar> bind(tape, params, false);
    return f(bind).scalar();
  };

  const Scalar h = static_cast<Scalar>(opt.step);
  Scalar worst = 0;
  for (const auto& name : params.names()) {
    auto& m = params.values(name);
    const auto& g = analytic.at(name);
    for (Index i = 0; i < m.size(); ++i) {
      const Scalar orig = m.data()[i];
      m.data()[i] = orig + h;
      const Scalar up = evaluate();
      m.data()[i] = orig - h;
      const Scalar down = evaluate();
      m.data()[i] = orig;
      const Scalar numeric = (up - down) / (Scalar(2) * h);
      const Scalar a = g.data()[i];
      const Scalar denom = std::max({Scalar(1), std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace sram
