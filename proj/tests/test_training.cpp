#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fixtures.hpp"
#include "sram/evaluation.hpp"

using namespace sram;
using fixtures::random_clip;
using fixtures::small_config;

namespace {

Matrix row(std::initializer_list<double> v) {
  Matrix m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

struct Toy {
  ModelConfig mc;
  Dataset data;
  SramModel model;
  std::vector<Matrix> rec;
};

Toy toy(std::uint64_t seed, Index clips = 12) {
  DatasetSpec spec;
  spec.n_clips = clips;
  spec.agents = 4;
  spec.frames = 10;
  spec.feat_dim = 8;
  spec.seed = seed;
  Toy t{small_config(8, 10, 3), generate_dataset(spec), {}, {}};
  t.model = init_model(t.mc, seed);
  t.model.recognition_frozen = true;
  for (const auto& c : t.data.clips) t.rec.push_back(recognition_features(t.model, c));
  return t;
}

std::vector<TrainingExample> batch_of(const Toy& t, Index t0) {
  std::vector<TrainingExample> b;
  for (std::size_t i = 0; i < t.data.clips.size(); ++i) b.push_back({&t.data.clips[i], t0, &t.rec[i]});
  return b;
}

}  // namespace

TEST_CASE("reconstruction and regression losses") {
  TapeD t;
  AnticipationRollout r;
  r.features = {t.constant(row({1, 0}))};
  r.positions = {t.constant(row({0.5, 0.5}))};
  CHECK(loss_rec(r, {row({0, 0})}).scalar() == 1.0);
  CHECK(loss_rec(r, {row({1, 0})}).scalar() == 0.0);
  CHECK(loss_reg(r, {row({0.3, 0.1})}).scalar() == doctest::Approx(0.2));
  CHECK(loss_reg(r, {row({0.5, 0.5})}).scalar() == 0.0);

  // per-stage squared errors 0.2 and 0.6
  AnticipationRollout two;
  two.features = {t.constant(row({0.5, 0.5})), t.constant(row({0.0, 0.0}))};
  const double err2 = 0.6;
  CHECK(loss_rec(two, {row({0.3, 0.1}), row({std::sqrt(err2), 0.0})}).scalar() == doctest::Approx(0.4));

  two.positions = {t.constant(row({0.5, 0.5})), t.constant(row({0.2, 0.2}))};
  const double base = loss_reg(two, {row({0.3, 0.1}), row({0.1, 0.4})}).scalar();
  const double doubled = loss_reg(two, {row({0.1, -0.3}), row({0.0, 0.6})}).scalar();
  CHECK(doubled == doctest::Approx(4 * base));
  CHECK_THROWS_AS(loss_rec(two, {row({0, 0})}), DimensionError);
}

TEST_CASE("adversarial and classification losses") {
  ModelConfig mc = small_config(4, 6, 2);
  SramModel m = init_model(mc, 1);
  fixtures::zero_params(m.params, "d2.");
  fixtures::zero_params(m.params, "d1.");
  TapeD t;
  Binding b(t, m.params, false);
  std::mt19937_64 rng(2);
  std::vector<VarD> fake = {t.constant(fixtures::uniform(3, 6, 0, 1, rng)), t.constant(fixtures::uniform(3, 6, 0, 1, rng))};
  std::vector<Matrix> real = {fixtures::uniform(3, 6, 0, 1, rng), fixtures::uniform(3, 6, 0, 1, rng)};
  GanLosses g = loss_gan(b, fake, real);
  CHECK(g.d2_loss.scalar() == doctest::Approx(2 * std::log(2.0)));
  CHECK(g.d2_loss.scalar() == doctest::Approx(1.3863).epsilon(1e-4));
  CHECK(g.gen_loss.scalar() == doctest::Approx(std::log(2.0)));

  VarD agg = t.constant(fixtures::uniform(1, 6, 0, 1, rng));
  CHECK(loss_cls(b, agg, 3).scalar() == doctest::Approx(std::log(6.0)));
  CHECK(loss_cls(b, agg, 3).scalar() == doctest::Approx(1.7918).epsilon(1e-4));
  CHECK_THROWS_AS(loss_cls(b, agg, 6), UsageError);
  CHECK_THROWS_AS(loss_cls(b, agg, -1), UsageError);
}

TEST_CASE("discriminator extremes saturate at the probability floor") {
  ModelConfig mc = small_config(4, 6, 1);
  SramModel m = init_model(mc, 3);
  fixtures::zero_params(m.params, "d2.");
  TapeD t;
  std::vector<VarD> fake = {t.constant(Matrix::Ones(2, 6))};
  std::vector<Matrix> real = {Matrix::Ones(2, 6)};

  m.params.values("d2.b2")(0, 0) = 60.0;  // D2 -> 1 everywhere
  {
    Binding b(t, m.params, false);
    GanLosses g = loss_gan(b, fake, real);
    CHECK(g.gen_loss.scalar() < 1e-6);
    CHECK(g.gen_loss.scalar() >= 0.0);
  }
  // D2 -> 1 on real, -> 0 on fake: reals have ones, fakes zeros.
  m.params.values("d2.b2")(0, 0) = -30.0;
  m.params.values("d2.w1").setConstant(1.0);
  m.params.values("d2.w2").setConstant(10.0);
  {
    Binding b(t, m.params, false);
    GanLosses g = loss_gan(b, {t.constant(Matrix::Zero(2, 6))}, real);
    CHECK(g.d2_loss.scalar() < 1e-6);
    CHECK(g.d2_loss.scalar() >= 0.0);
  }
}

TEST_CASE("identical inputs with different labels") {
  ModelConfig mc = small_config(4, 6, 1);
  SramModel m = init_model(mc, 5);
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    TapeD t;
    Binding b(t, m.params, false);
    VarD agg = t.constant(fixtures::uniform(1, 6, 0, 2, rng));
    CHECK(loss_cls(b, agg, 0).scalar() + loss_cls(b, agg, 1).scalar() >= 2 * std::log(2.0) - 1e-12);
  }
}

TEST_CASE("momentum update") {
  ParamStore p;
  p.add("a.w", Tensor::from_matrix(row({1.0, 2.0})));
  p.add("b.w", Tensor::from_matrix(row({5.0})));
  SgdMomentum opt(0.1, 0.9);
  GradientMap g = {{"a.w", row({1.0, -1.0})}, {"b.w", row({3.0})}};
  opt.step(p, g, {"a."});
  CHECK(p.at("a.w").matrix()(0, 0) == doctest::Approx(0.9));
  CHECK(p.at("b.w").matrix()(0, 0) == 5.0);
  opt.step(p, g, {"a."});
  // v = 0.9 * 1 + 1 = 1.9
  CHECK(p.at("a.w").matrix()(0, 0) == doctest::Approx(0.9 - 0.19));
  CHECK(p.at("a.w").matrix()(0, 1) == doctest::Approx(2.0 + 0.1 + 0.19));
}

TEST_CASE("stage targets") {
  Toy t = toy(7, 2);
  const Clip& c = t.data.clips[0];
  const std::vector<Index> k1 = {c.frames};
  auto one = recognition_targets(t.model, c, k1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == t.rec[0].bottomRows(c.agents));

  std::mt19937_64 rng(1);
  const auto perm = fixtures::random_order(c.agents, rng);
  const Clip pc = fixtures::permute_clip(c, perm);
  const std::vector<Index> taus = {4, 7, 10};
  auto a = recognition_targets(t.model, c, taus);
  auto b = recognition_targets(t.model, pc, taus);
  for (std::size_t k = 0; k < 3; ++k)
    CHECK((fixtures::permute_frames(a[k], c.agents, perm) - b[k]).cwiseAbs().maxCoeff() < 1e-9);

  SramModel unfrozen = t.model;
  unfrozen.recognition_frozen = false;
  CHECK_THROWS_AS(recognition_targets(unfrozen, c, taus), UsageError);
}

TEST_CASE("full objective gradient on a tiny instance") {
  CHECK(phase_b_gradcheck(3) < 1e-4);
  CHECK(phase_b_gradcheck(11) < 1e-4);
}

TEST_CASE("train step") {
  TrainConfig cfg;
  cfg.grad_clip = 0;

  SUBCASE("zero learning rate leaves parameters bitwise unchanged") {
    Toy t = toy(8);
    const ParamStore before = t.model.params;
    SgdMomentum a(0.0, 0.9), b(0.0, 0.9);
    train_step(t.model, batch_of(t, 4), a, b, cfg);
    for (const auto& name : before.names()) CHECK(before.at(name).matrix() == t.model.params.at(name).matrix());
  }
  SUBCASE("identical seeds give identical trajectories") {
    Toy t1 = toy(9), t2 = toy(9);
    SgdMomentum a1(0.01, 0.9), b1(0.01, 0.9), a2(0.01, 0.9), b2(0.01, 0.9);
    for (int s = 0; s < 3; ++s) {
      LossBundle l1 = train_step(t1.model, batch_of(t1, 3 + s), a1, b1, cfg);
      LossBundle l2 = train_step(t2.model, batch_of(t2, 3 + s), a2, b2, cfg);
      CHECK(l1.l_rec == l2.l_rec);
      CHECK(l1.l_gan == l2.l_gan);
      CHECK(l1.l_cls == l2.l_cls);
      CHECK(l1.l_reg == l2.l_reg);
      CHECK(l1.d2_loss == l2.d2_loss);
    }
    CHECK(parameter_hash(t1.model.params) == parameter_hash(t2.model.params));
  }
  SUBCASE("one step descends on its batch") {
    Toy t = toy(10);
    const auto batch = batch_of(t, 5);
    const double before = phase_b_value(t.model, batch, cfg.terms);
    SgdMomentum a(0.01, 0.9), b(0.01, 0.9);
    train_step(t.model, batch, a, b, cfg);
    CHECK(phase_b_value(t.model, batch, cfg.terms) < before);
  }
  SUBCASE("phase A touches only D2, phase B never touches D2") {
    Toy t = toy(11);
    const auto batch = batch_of(t, 5);
    auto hashes = [&] {
      std::map<std::string, std::uint64_t> h;
      for (const char* p : {kEncoderPrefix, kActivityPrefix, kPositionPrefix, kClassifierPrefix,
                            kDiscriminatorPrefix, kRecognitionPrefix})
        h[p] = parameter_hash(t.model.params, p);
      return h;
    };
    auto h0 = hashes();
    SgdMomentum d2_only(0.01, 0.9), frozen(0.0, 0.9);
    train_step(t.model, batch, d2_only, frozen, cfg);
    auto h1 = hashes();
    CHECK(h1[kDiscriminatorPrefix] != h0[kDiscriminatorPrefix]);
    for (const char* p : {kEncoderPrefix, kActivityPrefix, kPositionPrefix, kClassifierPrefix, kRecognitionPrefix})
      CHECK(h1[p] == h0[p]);

    SgdMomentum stop(0.0, 0.9), gen(0.01, 0.9);
    train_step(t.model, batch, stop, gen, cfg);
    auto h2 = hashes();
    CHECK(h2[kDiscriminatorPrefix] == h1[kDiscriminatorPrefix]);
    CHECK(h2[kRecognitionPrefix] == h1[kRecognitionPrefix]);
    for (const char* p : {kEncoderPrefix, kActivityPrefix, kPositionPrefix, kClassifierPrefix})
      CHECK(h2[p] != h1[p]);
  }
  SUBCASE("needs a frozen recognition model") {
    Toy t = toy(12, 2);
    t.model.recognition_frozen = false;
    SgdMomentum a(0.01, 0.9), b(0.01, 0.9);
    CHECK_THROWS_AS(train_step(t.model, batch_of(t, 3), a, b, cfg), UsageError);
  }
}

TEST_CASE("fit bookkeeping") {
  Toy t = toy(13, 8);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.eval_every = 0;

  SUBCASE("zero epochs keep the initialization") {
    const std::uint64_t h = parameter_hash(t.model.params);
    cfg.epochs = 0;
    CHECK(fit(t.model, t.data, nullptr, cfg).epochs.empty());
    CHECK(parameter_hash(t.model.params) == h);
  }
  SUBCASE("history length and frozen recognition model") {
    cfg.epochs = 3;
    const std::uint64_t rec = parameter_hash(t.model.params, kRecognitionPrefix);
    const Matrix feats = recognition_features(t.model, t.data.clips[0]);
    History h = fit(t.model, t.data, &t.data, cfg);
    CHECK(h.epochs.size() == 3);
    CHECK(h.epochs[0].accuracy.empty());
    CHECK(h.epochs[2].accuracy.size() == 10);
    CHECK(parameter_hash(t.model.params, kRecognitionPrefix) == rec);
    CHECK(recognition_features(t.model, t.data.clips[0]) == feats);
  }
  SUBCASE("empty dataset") {
    Dataset empty = t.data;
    empty.clips.clear();
    CHECK_THROWS_AS(fit(t.model, empty, nullptr, cfg), DataError);
  }
}

TEST_CASE("recognition training on a single clip") {
  DatasetSpec spec;
  spec.n_clips = 1;
  spec.agents = 4;
  spec.frames = 8;
  spec.feat_dim = 8;
  const Dataset one = generate_dataset(spec);
  SramModel m = init_model(small_config(8, 10, 2), 4);
  TrainConfig cfg;
  cfg.recognition_epochs = 5;
  cfg.grad_clip = 0;
  const auto losses = train_recognition(m, one, cfg);
  REQUIRE(losses.size() == 5);
  for (std::size_t e = 1; e < losses.size(); ++e) CHECK(losses[e] < losses[e - 1]);
  CHECK(m.recognition_frozen);
  CHECK_THROWS_AS(train_recognition(m, one, cfg), UsageError);
}
