#include "sram/synthetic_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sram/errors.hpp"

namespace sram {

namespace {

using Vec2 = Eigen::RowVector2d;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

Vec2 toward(const Vec2& from, const Vec2& to, double max_step) {
  const Vec2 d = to - from;
  const double n = d.norm();
  if (n <= max_step || n == 0.0) return d;
  return d * (max_step / n);
}

Vec2 random_direction(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  const double a = angle(rng);
  return {std::cos(a), std::sin(a)};
}

Vec2 centroid(const Matrix& frame) { return frame.colwise().mean(); }

// State fixed when the class dynamics take over.
struct Onset {
  double angular_rate = 0.0;
  Index leader = 0;
  Vec2 heading = Vec2::Zero();
  std::vector<Index> rank;  // queue position per agent
};

class Simulator {
 public:
  Simulator(int activity, const DatasetSpec& spec, std::mt19937_64& rng)
      : activity_(activity), spec_(spec), rng_(rng), noise_(0.0, 1.0) {}

  Matrix run() {
    const Index n = spec_.agents, t = spec_.frames;
    Matrix out(t * n, 2);
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    const Vec2 c0(spec_.arena * (0.5 + jitter(rng_)), spec_.arena * (0.5 + jitter(rng_)));
    Matrix cur(n, 2);
    for (Index i = 0; i < n; ++i) cur.row(i) = c0 + Vec2(noise_(rng_), noise_(rng_));
    clamp(cur);
    out.topRows(n) = cur;

    // Class dynamics start no earlier than the first step.
    const Index window = std::max<Index>(1, ambiguity_frames(spec_));
    for (Index f = 1; f < t; ++f) {
      Matrix step;
      if (f < window || activity_ == 5) {
        step = mill(cur);
      } else {
        if (f == window) start(cur);
        step = class_step(cur);
      }
      for (Index i = 0; i < n; ++i)
        step.row(i) += spec_.position_noise * Vec2(noise_(rng_), noise_(rng_));
      // Orbit produces absolute positions rather than displacements.
      if (activity_ == 4 && f >= window)
        cur = step;
      else
        cur += step;
      clamp(cur);
      out.middleRows(f * n, n) = cur;
    }
    return out;
  }

 private:
  void clamp(Matrix& m) const { m = m.cwiseMax(0.0).cwiseMin(spec_.arena); }

  Matrix mill(const Matrix& cur) {
    Matrix step(cur.rows(), 2);
    for (Index i = 0; i < cur.rows(); ++i) step.row(i) = spec_.speed * random_direction(rng_);
    return step;
  }

  void start(const Matrix& cur) {
    const Vec2 c = centroid(cur);
    const Index n = cur.rows();
    switch (activity_) {
      case 2: {  // follow
        std::uniform_int_distribution<Index> pick(0, n - 1);
        onset_.leader = pick(rng_);
        onset_.heading = random_direction(rng_);
        break;
      }
      case 3: {  // queue
        onset_.heading = random_direction(rng_);
        std::vector<Index> order(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
          return cur.row(a).dot(onset_.heading) > cur.row(b).dot(onset_.heading);
        });
        onset_.rank.assign(static_cast<std::size_t>(n), 0);
        for (Index r = 0; r < n; ++r) onset_.rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r;
        onset_.leader = order.front();
        break;
      }
      case 4: {  // orbit
        double mean_radius = 0.0;
        for (Index i = 0; i < n; ++i) mean_radius += (cur.row(i) - c).norm();
        mean_radius /= static_cast<double>(n);
        std::bernoulli_distribution sign(0.5);
        onset_.angular_rate = (sign(rng_) ? 1.0 : -1.0) * spec_.speed / std::max(mean_radius, 1.0);
        break;
      }
      default:
        break;
    }
  }

  // Displacement for this frame (absolute positions for orbit).
  Matrix class_step(const Matrix& cur) {
    const Index n = cur.rows();
    const Vec2 c = centroid(cur);
    Matrix step = Matrix::Zero(n, 2);
    switch (activity_) {
      case 0:  // converge
        for (Index i = 0; i < n; ++i) step.row(i) = toward(cur.row(i), c, spec_.speed);
        break;
      case 1:  // disperse
        for (Index i = 0; i < n; ++i) {
          Vec2 d = cur.row(i) - c;
          const double len = d.norm();
          step.row(i) = (len > 0 ? Vec2(d / len) : random_direction(rng_)) * spec_.speed;
        }
        break;
      case 2: {  // follow
        const double turn = 0.3 * noise_(rng_);
        const double ca = std::cos(turn), sa = std::sin(turn);
        onset_.heading = Vec2(ca * onset_.heading.x() - sa * onset_.heading.y(),
                              sa * onset_.heading.x() + ca * onset_.heading.y());
        const Vec2 leader = cur.row(onset_.leader);
        for (Index i = 0; i < n; ++i) {
          if (i == onset_.leader) {
            step.row(i) = spec_.speed * onset_.heading;
            continue;
          }
          const Vec2 d = leader - cur.row(i);
          const double gap = std::max(0.0, d.norm() - 0.5);
          step.row(i) = toward(Vec2::Zero(), d, std::min(spec_.speed, gap));
        }
        break;
      }
      case 3: {  // queue
        const Vec2 head = cur.row(onset_.leader);
        for (Index i = 0; i < n; ++i) {
          const Index r = onset_.rank[static_cast<std::size_t>(i)];
          if (r == 0) {
            step.row(i) = spec_.speed * onset_.heading;
            continue;
          }
          const Vec2 target = head - static_cast<double>(r) * 0.6 * onset_.heading;
          step.row(i) = toward(cur.row(i), target, 1.5 * spec_.speed);
        }
        break;
      }
      case 4: {  // orbit: rigid rotation about the centroid
        const double ca = std::cos(onset_.angular_rate), sa = std::sin(onset_.angular_rate);
        for (Index i = 0; i < n; ++i) {
          const Vec2 d = cur.row(i) - c;
          step.row(i) = c + Vec2(ca * d.x() - sa * d.y(), sa * d.x() + ca * d.y());
        }
        break;
      }
      default:
        break;
    }
    return step;
  }

  int activity_;
  const DatasetSpec& spec_;
  std::mt19937_64& rng_;
  std::normal_distribution<double> noise_;
  Onset onset_;
};

double round_sig9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

nlohmann::json matrix_rows(const Matrix& m, Index r0, Index rows) {
  nlohmann::json out = nlohmann::json::array();
  for (Index r = r0; r < r0 + rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(round_sig9(m(r, c)));
    out.push_back(std::move(row));
  }
  return out;
}

[[noreturn]] void data_error(const std::string& path, const std::string& what) {
  throw DataError(path + ": " + what);
}

const nlohmann::json& field(const nlohmann::json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) data_error(path, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) data_error(path + "." + key, "missing field");
  return *it;
}

double number(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number()) data_error(path, "expected a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) data_error(path, "non-finite value");
  return d;
}

Index count(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 1) data_error(path, "expected a positive integer");
  return static_cast<Index>(v.get<long long>());
}

// Reads a rows x cols array of arrays into `out` starting at row r0.
void read_rows(const nlohmann::json& v, Index rows, Index cols, Matrix& out, Index r0, const std::string& path) {
  if (!v.is_array() || static_cast<Index>(v.size()) != rows)
    data_error(path, "expected an array of " + std::to_string(rows) + " rows");
  for (Index r = 0; r < rows; ++r) {
    const auto& row = v[static_cast<std::size_t>(r)];
    const std::string rp = path + "[" + std::to_string(r) + "]";
    if (!row.is_array() || static_cast<Index>(row.size()) != cols)
      data_error(rp, "expected " + std::to_string(cols) + " values");
    for (Index c = 0; c < cols; ++c)
      out(r0 + r, c) = number(row[static_cast<std::size_t>(c)], rp + "[" + std::to_string(c) + "]");
  }
}

}  // namespace

Index ambiguity_frames(const DatasetSpec& spec) {
  return static_cast<Index>(std::ceil(spec.ambiguity * static_cast<double>(spec.frames)));
}

int activity_index(const std::string& name) {
  for (std::size_t i = 0; i < kActivityNames.size(); ++i)
    if (kActivityNames[i] == name) return static_cast<int>(i);
  throw UsageError("unknown activity class: " + name);
}

std::pair<Matrix, RowVector> feature_map(const DatasetSpec& spec) {
  std::mt19937_64 rng(splitmix64(spec.seed ^ 0xF00Dull));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix projection(spec.feat_dim, kKinematicDim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kKinematicDim));
  for (Index r = 0; r < projection.rows(); ++r)
    for (Index c = 0; c < projection.cols(); ++c) projection(r, c) = round_sig9(scale * gauss(rng));
  RowVector bias(spec.feat_dim);
  for (Index c = 0; c < bias.size(); ++c) bias(c) = round_sig9(0.1 * gauss(rng));
  return {projection, bias};
}

Matrix simulate_clip(const std::string& activity, const DatasetSpec& spec, std::mt19937_64& rng) {
  const int a = activity_index(activity);
  if (spec.agents < 1 || spec.frames < 1) throw UsageError("simulate_clip: need agents >= 1 and frames >= 1");
  if (spec.ambiguity < 0.0 || spec.ambiguity >= 1.0) throw UsageError("ambiguity fraction must lie in [0,1)");
  return Simulator(a, spec, rng).run();
}

Matrix kinematics(const Matrix& positions, Index agents) {
  const Index frames = positions.rows() / agents;
  Matrix k = Matrix::Zero(positions.rows(), kKinematicDim);
  for (Index f = 0; f < frames; ++f) {
    const Matrix frame = positions.middleRows(f * agents, agents);
    const Vec2 c = centroid(frame);
    for (Index i = 0; i < agents; ++i) {
      const Index r = f * agents + i;
      const Vec2 v = f == 0 ? Vec2::Zero() : Vec2(positions.row(r) - positions.row(r - agents));
      const double speed = v.norm();
      const double heading = std::atan2(v.y(), v.x());
      const Vec2 to_c = c - frame.row(i);
      const double dist = to_c.norm();
      const Vec2 unit = dist > 1e-12 ? Vec2(to_c / dist) : Vec2::Zero();
      k.row(r) << v.x(), v.y(), speed, std::cos(heading), std::sin(heading), dist, unit.x(), unit.y();
    }
  }
  return k;
}

Matrix featurize(const Matrix& positions, Index agents, const Matrix& projection, const RowVector& bias,
                 double feature_noise, std::mt19937_64& rng) {
  if (projection.rows() < kKinematicDim) throw UsageError("feature dimension must be at least 8");
  Matrix x = ((kinematics(positions, agents) * projection.transpose()).rowwise() + bias).cwiseMax(0.0);
  if (feature_noise > 0.0) {
    std::normal_distribution<double> gauss(0.0, feature_noise);
    for (Index r = 0; r < x.rows(); ++r)
      for (Index c = 0; c < x.cols(); ++c) x(r, c) += gauss(rng);
  }
  return x;
}

std::mt19937_64 clip_rng(std::uint64_t seed, Split split, Index index) {
  const std::uint64_t stream = (split == Split::kTrain ? 0ull : 1ull << 62) ^ static_cast<std::uint64_t>(index);
  return std::mt19937_64(splitmix64(seed ^ splitmix64(stream)));
}

Dataset generate_dataset(const DatasetSpec& spec) {
  if (spec.classes.empty()) throw UsageError("dataset needs at least one class");
  if (spec.n_clips < 1) throw UsageError("dataset needs at least one clip");
  for (const auto& c : spec.classes) activity_index(c);
  Dataset d;
  d.classes = spec.classes;
  d.agents = spec.agents;
  d.frames = spec.frames;
  d.feat_dim = spec.feat_dim;
  d.arena = spec.arena;
  std::tie(d.projection, d.bias) = feature_map(spec);
  d.clips.reserve(static_cast<std::size_t>(spec.n_clips));
  const Index num_classes = static_cast<Index>(spec.classes.size());
  for (Index i = 0; i < spec.n_clips; ++i) {
    auto rng = clip_rng(spec.seed, spec.split, i);
    Clip clip;
    clip.label = static_cast<int>(i % num_classes);
    clip.frames = spec.frames;
    clip.agents = spec.agents;
    clip.positions = simulate_clip(spec.classes[static_cast<std::size_t>(clip.label)], spec, rng);
    clip.features = featurize(clip.positions, spec.agents, d.projection, d.bias, spec.feature_noise, rng);
    // Keep the in-memory copy identical to what a reload of the file yields.
    clip.positions = clip.positions.unaryExpr(&round_sig9);
    clip.features = clip.features.unaryExpr(&round_sig9);
    d.clips.push_back(std::move(clip));
  }
  normalize_positions(d);
  return d;
}

void normalize_positions(Dataset& data) {
  for (auto& clip : data.clips) clip.normalized_positions = clip.positions / data.arena;
}

std::string dataset_to_json(const Dataset& data) {
  nlohmann::json j;
  j["version"] = 1;
  j["classes"] = data.classes;
  j["agents"] = data.agents;
  j["frames"] = data.frames;
  j["feat_dim"] = data.feat_dim;
  j["arena"] = data.arena;
  j["projection"] = matrix_rows(data.projection, 0, data.projection.rows());
  j["bias"] = matrix_rows(data.bias, 0, 1)[0];
  nlohmann::json clips = nlohmann::json::array();
  for (const auto& clip : data.clips) {
    nlohmann::json pos = nlohmann::json::array(), feat = nlohmann::json::array();
    for (Index f = 0; f < clip.frames; ++f) {
      pos.push_back(matrix_rows(clip.positions, f * clip.agents, clip.agents));
      feat.push_back(matrix_rows(clip.features, f * clip.agents, clip.agents));
    }
    clips.push_back({{"label", clip.label}, {"positions", std::move(pos)}, {"features", std::move(feat)}});
  }
  j["clips"] = std::move(clips);
  return j.dump();
}

Dataset dataset_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("$: malformed JSON: ") + e.what());
  }
  const auto& version = field(j, "version", "$");
  if (!version.is_number_integer() || version.get<int>() != 1) data_error("$.version", "unsupported version");

  Dataset d;
  const auto& classes = field(j, "classes", "$");
  if (!classes.is_array() || classes.empty()) data_error("$.classes", "expected a non-empty array");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    if (!classes[i].is_string()) data_error("$.classes[" + std::to_string(i) + "]", "expected a string");
    d.classes.push_back(classes[i].get<std::string>());
  }
  d.agents = count(field(j, "agents", "$"), "$.agents");
  d.frames = count(field(j, "frames", "$"), "$.frames");
  d.feat_dim = count(field(j, "feat_dim", "$"), "$.feat_dim");
  d.arena = number(field(j, "arena", "$"), "$.arena");
  if (d.arena <= 0) data_error("$.arena", "must be positive");

  const auto& proj = field(j, "projection", "$");
  if (!proj.is_array() || proj.empty() || !proj[0].is_array()) data_error("$.projection", "expected a matrix");
  d.projection.resize(d.feat_dim, static_cast<Index>(proj[0].size()));
  read_rows(proj, d.feat_dim, d.projection.cols(), d.projection, 0, "$.projection");
  Matrix bias(1, d.feat_dim);
  read_rows(nlohmann::json::array({field(j, "bias", "$")}), 1, d.feat_dim, bias, 0, "$.bias");
  d.bias = bias.row(0);

  const auto& clips = field(j, "clips", "$");
  if (!clips.is_array()) data_error("$.clips", "expected an array");
  d.clips.reserve(clips.size());
  const Index n = d.agents, t = d.frames;
  for (std::size_t ci = 0; ci < clips.size(); ++ci) {
    const std::string cp = "$.clips[" + std::to_string(ci) + "]";
    const auto& c = clips[ci];
    Clip clip;
    const auto& label = field(c, "label", cp);
    if (!label.is_number_integer()) data_error(cp + ".label", "expected an integer");
    const long long y = label.get<long long>();
    if (y < 0 || y >= d.num_classes())
      data_error(cp + ".label", "label " + std::to_string(y) + " outside [0," + std::to_string(d.num_classes()) + ")");
    clip.label = static_cast<int>(y);
    clip.frames = t;
    clip.agents = n;
    clip.positions.resize(t * n, 2);
    clip.features.resize(t * n, d.feat_dim);
    const auto& pos = field(c, "positions", cp);
    const auto& feat = field(c, "features", cp);
    if (!pos.is_array() || static_cast<Index>(pos.size()) != t) data_error(cp + ".positions", "expected " + std::to_string(t) + " frames");
    if (!feat.is_array() || static_cast<Index>(feat.size()) != t) data_error(cp + ".features", "expected " + std::to_string(t) + " frames");
    for (Index f = 0; f < t; ++f) {
      const std::string fi = "[" + std::to_string(f) + "]";
      read_rows(pos[static_cast<std::size_t>(f)], n, 2, clip.positions, f * n, cp + ".positions" + fi);
      read_rows(feat[static_cast<std::size_t>(f)], n, d.feat_dim, clip.features, f * n, cp + ".features" + fi);
    }
    if ((clip.positions.array() < 0.0).any() || (clip.positions.array() > d.arena).any())
      data_error(cp + ".positions", "position outside [0, arena]");
    d.clips.push_back(std::move(clip));
  }
  normalize_positions(d);
  return d;
}

void write_dataset(const Dataset& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << dataset_to_json(data);
  if (!out) throw DataError(path + ": write failed");
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return dataset_from_json(ss.str());
}

}  // namespace sram
