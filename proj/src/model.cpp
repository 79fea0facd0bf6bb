#include "sram/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sram/errors.hpp"

namespace sram {

namespace {

Tensor glorot(std::vector<Index> shape, Index fan_in, Index fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-a, a);
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.matrix().data()[i] = u(rng);
  return t;
}

void add_linear(ParamStore& s, const std::string& w, const std::string& b, Index in, Index out, std::mt19937_64& rng) {
  s.add(w, glorot({in, out}, in, out, rng));
  s.add(b, Tensor({out}));
}

void add_classifier_and_discriminator(ParamStore& s, const ModelConfig& c, std::mt19937_64& rng) {
  add_linear(s, "d1.w", "d1.b", c.hidden, c.classes, rng);
  add_linear(s, "d2.w1", "d2.b1", c.hidden, c.discriminator_hidden, rng);
  add_linear(s, "d2.w2", "d2.b2", c.discriminator_hidden, 1, rng);
}

}  // namespace

std::string to_string(PositionHead head) { return head == PositionHead::kLinear ? "linear" : "relu"; }

PositionHead position_head_from_string(const std::string& s) {
  if (s == "linear") return PositionHead::kLinear;
  if (s == "relu") return PositionHead::kRelu;
  throw UsageError("unknown position head: " + s);
}

void add_stgcn_params(ParamStore& store, const std::string& prefix, Index d_in, Index hidden, std::mt19937_64& rng) {
  Index in = d_in;
  for (const char* layer : {".l1", ".l2"}) {
    const std::string p = prefix + layer;
    add_linear(store, p + ".w_p", p + ".b_p", in, hidden, rng);
    add_linear(store, p + ".w_a", p + ".b_a", in, hidden, rng);
    store.add(p + ".kernel", glorot({3, hidden, hidden}, 3 * hidden, hidden, rng));
    store.add(p + ".kernel_b", Tensor({hidden}));
    in = hidden;
  }
}

SramModel init_model(const ModelConfig& c, std::uint64_t seed) {
  if (c.hidden < 1 || c.feat_dim < 1 || c.classes < 1 || c.stages < 1 || c.position_hidden < 1)
    throw UsageError("model dimensions must be positive");
  std::mt19937_64 rng(seed);
  SramModel m;
  m.config = c;
  ParamStore& s = m.params;
  add_stgcn_params(s, "enc", c.feat_dim, c.hidden, rng);

  for (const char* n : {"ep", "ea", "da", "dp"})
    add_linear(s, std::string("act.u_") + n, std::string("act.b_") + n, c.hidden, c.hidden, rng);

  for (const char* n : {"ep", "ea"}) {
    add_linear(s, std::string("pos.v_") + n + "1", std::string("pos.b_") + n + "1", 2, c.position_hidden, rng);
    add_linear(s, std::string("pos.v_") + n + "2", std::string("pos.b_") + n + "2", c.position_hidden, c.hidden, rng);
  }
  add_linear(s, "pos.v_da", "pos.b_da", c.hidden, 2, rng);
  add_linear(s, "pos.v_dp", "pos.b_dp", c.hidden, 2, rng);

  add_classifier_and_discriminator(s, c, rng);

  add_stgcn_params(s, "rec", c.feat_dim, c.hidden, rng);
  add_linear(s, "rec.head.w", "rec.head.b", c.hidden, c.classes, rng);
  return m;
}

std::string model_to_json(const SramModel& model) {
  const ModelConfig& c = model.config;
  nlohmann::json j;
  j["version"] = 1;
  j["config"] = {{"feat_dim", c.feat_dim},
                 {"hidden", c.hidden},
                 {"position_hidden", c.position_hidden},
                 {"stages", c.stages},
                 {"classes", c.classes},
                 {"discriminator_hidden", c.discriminator_hidden},
                 {"graph_epsilon", c.graph_epsilon},
                 {"position_head", to_string(c.position_head)},
                 {"position_autoencoder", c.position_autoencoder},
                 {"recognition_frozen", model.recognition_frozen}};
  nlohmann::json params = nlohmann::json::object();
  for (const auto& [name, t] : model.params) params[name] = {{"shape", t.shape()}, {"data", t.row_major()}};
  j["params"] = std::move(params);
  return j.dump();
}

SramModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("$: malformed JSON: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != 1) throw DataError("$.version: unsupported version");
    const auto& cj = j.at("config");
    SramModel m;
    ModelConfig& c = m.config;
    c.feat_dim = cj.at("feat_dim").get<Index>();
    c.hidden = cj.at("hidden").get<Index>();
    c.position_hidden = cj.at("position_hidden").get<Index>();
    c.stages = cj.at("stages").get<Index>();
    c.classes = cj.at("classes").get<Index>();
    c.discriminator_hidden = cj.at("discriminator_hidden").get<Index>();
    c.graph_epsilon = cj.at("graph_epsilon").get<double>();
    c.position_head = position_head_from_string(cj.at("position_head").get<std::string>());
    c.position_autoencoder = cj.at("position_autoencoder").get<bool>();
    m.recognition_frozen = cj.at("recognition_frozen").get<bool>();
    for (const auto& [name, tj] : j.at("params").items()) {
      auto shape = tj.at("shape").get<std::vector<Index>>();
      auto data = tj.at("data").get<std::vector<double>>();
      try {
        m.params.add(name, Tensor::from_row_major(std::move(shape), data));
      } catch (const std::exception& e) {
        throw DataError("$.params." + name + ": " + e.what());
      }
    }
    // Shapes must match what the configuration implies.
    const SramModel reference = init_model(c, 0);
    for (const auto& [name, t] : reference.params) {
      if (!m.params.contains(name)) throw DataError("$.params." + name + ": missing parameter");
      if (m.params.at(name).shape() != t.shape())
        throw DataError("$.params." + name + ": shape " + shape_string(m.params.at(name).shape()) + " expected " +
                        shape_string(t.shape()));
    }
    if (m.params.size() != reference.params.size()) throw DataError("$.params: unexpected extra parameters");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("$: invalid model file: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("$.config: ") + e.what());
  }
}

void save_model(const SramModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << model_to_json(model);
  if (!out) throw DataError(path + ": write failed");
}

SramModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path + ": cannot open");
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace sram
