// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>

#include "fixtures.hpp"
#include "sram/cli.hpp"
#include "sram/evaluation.hpp"
#include "sram/parallel.hpp"
#include "sram/relation_graphs.hpp"

using namespace sram;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
  if (!pass) ++failures;
  std::printf("criterion %d %s: %s | %s\n", id, pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Scalar-loop graph oracles.
Matrix loop_action(const Matrix& x) {
  const Index n = x.rows();
  Matrix g(n, n);
  for (Index i = 0; i < n; ++i) {
    std::vector<double> s(static_cast<std::size_t>(n));
    double top = -1e300;
    for (Index j = 0; j < n; ++j) {
      double dot = 0;
      for (Index d = 0; d < x.cols(); ++d) dot += x(i, d) * x(j, d);
      s[static_cast<std::size_t>(j)] = dot;
      top = std::max(top, dot);
    }
    double z = 0;
    for (double v : s) z += std::exp(v - top);
    for (Index j = 0; j < n; ++j) g(i, j) = std::exp(s[static_cast<std::size_t>(j)] - top) / z;
  }
  return g;
}

Matrix loop_position(const Matrix& b, double eps) {
  const Index n = b.rows();
  Matrix g = Matrix::Zero(n, n);
  if (n == 1) return Matrix::Ones(1, 1);
  for (Index i = 0; i < n; ++i) {
    double total = 0;
    for (Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = b(i, 0) - b(j, 0), dy = b(i, 1) - b(j, 1);
      g(i, j) = 1.0 / (std::sqrt(dx * dx + dy * dy) + eps);
      total += g(i, j);
    }
    for (Index j = 0; j < n; ++j) g(i, j) /= total;
  }
  return g;
}

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return saa > 0 && sbb > 0 ? sab / std::sqrt(saa * sbb) : 0.0;
}

double mean_up_to(const RatioSweepResult& r, double max_ratio) {
  double s = 0;
  int n = 0;
  for (const auto& [ratio, acc] : r.rows)
    if (ratio <= max_ratio + 1e-9) s += acc, ++n;
  return s / n;
}

double accuracy_at(const RatioSweepResult& r, double ratio) {
  for (const auto& [x, acc] : r.rows)
    if (std::abs(x - ratio) < 1e-9) return acc;
  return -1;
}

std::string sweep_string(const RatioSweepResult& r) {
  std::ostringstream s;
  for (const auto& [ratio, acc] : r.rows) s << (s.tellp() ? " " : "") << ratio << ":" << fmt("%.3f", acc);
  return s.str();
}

int run_cli_args(std::vector<std::string> args) {
  args.insert(args.begin(), "sram_cli");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// gen, train, eval, posmetrics and ablate through the CLI into `dir`.
std::vector<std::string> pipeline_outputs(const fs::path& dir) {
  fs::create_directories(dir);
  const std::string train = (dir / "train.json").string(), test = (dir / "test.json").string(),
                    model = (dir / "model.json").string();
  const std::vector<std::string> shape = {"--agents", "4", "--frames", "10", "--feat-dim", "8"};
  auto with = [&](std::vector<std::string> a, const std::vector<std::string>& extra) {
    a.insert(a.end(), extra.begin(), extra.end());
    return a;
  };
  const std::vector<std::string> small = {"--hidden", "16", "--stages", "3", "--epochs", "2", "--rec-epochs", "2"};
  int rc = 0;
  rc |= run_cli_args(with({"gen", "--clips", "120", "--seed", "5", "--out", train}, shape));
  rc |= run_cli_args(with({"gen", "--clips", "60", "--seed", "5", "--split", "test", "--out", test}, shape));
  rc |= run_cli_args(with({"train", "--train", train, "--test", test, "--model", model, "--out",
                           (dir / "history.csv").string()},
                          small));
  rc |= run_cli_args({"eval", "--model", model, "--data", test, "--out", (dir / "sweep.csv").string()});
  rc |= run_cli_args({"posmetrics", "--model", model, "--data", test, "--out", (dir / "pos.csv").string()});
  rc |= run_cli_args(with({"ablate", "--train", train, "--test", test, "--variants", "full,K=1", "--out",
                           (dir / "ablate.csv").string()},
                          small));
  if (rc != 0) return {};
  std::vector<std::string> files;
  for (const char* f : {"train.json", "test.json", "history.csv", "sweep.csv", "pos.csv", "ablate.csv"})
    files.push_back(slurp(dir / f));
  return files;
}

}  // namespace

int main() {
  const int threads = thread_limit();

  // 1. gradient correctness
  {
    const auto t0 = Clock::now();
    const double err = phase_b_gradcheck(3);
    const double secs = seconds_since(t0);
    report(1, "gradient correctness", err < 1e-4 && secs < 60,
           fmt("max relative error %.3e (< 1e-4), %.1f s (< 60 s)", err, secs));
  }

  // 2. graph oracle equivalence
  {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<Index> pick_n(1, 8), pick_d(1, 32);
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Index n = pick_n(rng), d = pick_d(rng);
      const Matrix x = fixtures::uniform(n, d, -1, 1, rng);
      const Matrix b = fixtures::uniform(n, 2, 0, 1, rng);
      worst = std::max(worst, (action_graph(x) - loop_action(x)).cwiseAbs().maxCoeff());
      worst = std::max(worst, (position_graph(b, kDefaultGraphEpsilon) - loop_position(b, kDefaultGraphEpsilon))
                                  .cwiseAbs()
                                  .maxCoeff());
    }
    report(2, "graph oracle equivalence", worst < 1e-9, fmt("max deviation %.3e over 100 instances (< 1e-9)", worst));
  }

  // Default synthetic configuration.
  DatasetSpec spec;
  spec.n_clips = 2400;
  spec.seed = 7;
  const Dataset train = generate_dataset(spec);
  spec.n_clips = 600;
  spec.split = Split::kTest;
  const Dataset test = generate_dataset(spec);

  ModelConfig mc;
  mc.feat_dim = 16;
  mc.hidden = 64;
  mc.stages = 5;
  mc.classes = 6;
  TrainConfig tc;
  tc.epochs = 30;
  tc.recognition_epochs = 30;
  tc.seed = 7;
  tc.threads = threads;

  const auto t_train = Clock::now();
  SramModel reference = init_model(mc, tc.seed);
  train_recognition(reference, train, tc);
  const double rec_secs = seconds_since(t_train);
  const auto t_fit = Clock::now();
  const SramModel full = train_variant(reference, make_variant("full", mc), train, tc);
  const double train_secs = rec_secs + seconds_since(t_fit);
  const RatioSweepResult full_sweep = evaluate(full, test, default_ratios(), threads);
  std::printf("info: recognition accuracy on test %.3f; full model sweep %s\n", recognition_accuracy(reference, test),
              sweep_string(full_sweep).c_str());

  // 3. permutation invariance
  {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::size_t> pick(0, test.clips.size() - 1);
    double worst = 0;
    for (int trial = 0; trial < 50; ++trial) {
      const Clip& c = test.clips[pick(rng)];
      const auto perm = fixtures::random_order(c.agents, rng);
      const Index t0 = observed_frames(default_ratios()[static_cast<std::size_t>(trial % 10)], c.frames);
      const Matrix a = predict_logits(full, c, t0);
      const Matrix b = predict_logits(full, fixtures::permute_clip(c, perm), t0);
      worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
    }
    report(3, "permutation invariance", worst < 1e-6, fmt("max logit change %.3e over 50 clips (< 1e-6)", worst));
  }

  // 4. end-to-end learnability
  {
    const double a10 = accuracy_at(full_sweep, 1.0), a3 = accuracy_at(full_sweep, 0.3);
    const bool pass = a10 >= 0.85 && a3 >= 0.55 && (threads > 1 || train_secs <= 600);
    report(4, "end-to-end learnability", pass,
           fmt("acc@1.0 %.3f (>= 0.85), acc@0.3 %.3f (>= 0.55), training %.0f s single-threaded=%s (<= 600 s)", a10,
               a3, train_secs, threads == 1 ? "yes" : "no"));
  }

  // 5 and 6. unrolling and position-loss ablations, same seed and recognition model
  const SramModel k1 = train_variant(reference, make_variant("K=1", mc), train, tc);
  const RatioSweepResult k1_sweep = evaluate(k1, test, default_ratios(), threads);
  std::printf("info: K=1 sweep %s\n", sweep_string(k1_sweep).c_str());
  {
    const double a = mean_up_to(full_sweep, 0.5), b = mean_up_to(k1_sweep, 0.5);
    report(5, "unrolling benefit", a - b >= 0.02,
           fmt("mean acc over ratios <= 0.5: K=5 %.3f, K=1 %.3f, gap %+.3f (>= +0.020)", a, b, a - b));
  }
  const SramModel no_reg = train_variant(reference, make_variant("no-reg", mc), train, tc);
  const RatioSweepResult no_reg_sweep = evaluate(no_reg, test, default_ratios(), threads);
  std::printf("info: no-reg sweep %s\n", sweep_string(no_reg_sweep).c_str());
  report(6, "position-loss benefit", full_sweep.mean >= no_reg_sweep.mean,
         fmt("mean acc full %.3f, no-reg %.3f (full >= no-reg)", full_sweep.mean, no_reg_sweep.mean));

  // 7. trend
  {
    std::vector<double> r, a;
    for (const auto& [ratio, acc] : full_sweep.rows) r.push_back(ratio), a.push_back(acc);
    const double rho = spearman(r, a);
    report(7, "ratio-accuracy trend", rho >= 0.8, fmt("Spearman %.3f (>= 0.8)", rho));
  }

  // 8. position anticipation
  {
    const std::vector<std::string> classes = {"converge", "orbit"};
    const PositionMetrics learned = position_metrics(full, test, 0.3, classes);
    const PositionMetrics persist = persistence_metrics(test, 0.3, mc.stages, classes);
    report(8, "position anticipation", learned.ade <= 0.9 * persist.ade,
           fmt("ADE learned %.3f vs persistence %.3f (ratio %.3f, <= 0.900); FDE %.3f vs %.3f", learned.ade,
               persist.ade, learned.ade / persist.ade, learned.fde, persist.fde));
  }

  // 9. determinism and round trip
  {
    const fs::path root = fs::temp_directory_path() / "sram_acceptance";
    fs::remove_all(root);
    const auto run1 = pipeline_outputs(root / "a"), run2 = pipeline_outputs(root / "b");
    const bool same = !run1.empty() && run1 == run2;

    const fs::path model_path = root / "full.json";
    save_model(full, model_path.string());
    const SramModel loaded = load_model(model_path.string());
    bool bitwise = true;
    for (std::size_t i = 0; i < test.clips.size() && bitwise; i += 7) {
      const Clip& c = test.clips[i];
      for (double ratio : {0.1, 0.5, 1.0}) {
        const Index t0 = observed_frames(ratio, c.frames);
        bitwise = bitwise && predict_logits(full, c, t0) == predict_logits(loaded, c, t0);
        const auto p = predict_positions(full, c, t0), q = predict_positions(loaded, c, t0);
        for (std::size_t k = 0; k < p.size(); ++k) bitwise = bitwise && p[k] == q[k];
      }
    }
    report(9, "determinism and round trip", same && bitwise,
           fmt("repeated CLI pipeline outputs identical: %s; saved model forward bitwise identical: %s",
               same ? "yes" : "no", bitwise ? "yes" : "no"));
    fs::remove_all(root);
  }

  std::printf("%d of 9 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
