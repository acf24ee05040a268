#include <doctest.h>

#include <cmath>

#include "langpref/latent.hpp"

using namespace langpref;
using namespace langpref::latent;
using diff::Tensor;

namespace {

world::Trajectory two_step() {
  world::Trajectory t;
  t.states = {{0.2, 0.3, 1.0}, {0.25, 0.1, 0.0}};
  t.actions = {{0.05, -0.2, -1.0}, {0.0, 0.0, 0.0}};
  return t;
}

EncoderPair small_pair(int d, int vocab, std::uint64_t seed) {
  LatentConfig cfg;
  cfg.latent_dim = d;
  cfg.hidden = {5};
  return EncoderPair::initialize(cfg, vocab, 0.1, seed);
}

struct Data {
  world::TrajectoryPool pool;
  lang::Catalog catalog = lang::Catalog::builtin();
  lang::TripletDataset ds;
};

Data small_data(int count, std::uint64_t seed, lang::PairsPerSplit pairs) {
  Data d;
  d.pool = world::generate_pool(world::WorldConfig{}, count, seed);
  world::split(d.pool, world::SplitRatios{}, seed);
  d.ds = lang::build_triplets(d.pool, d.catalog, lang::default_epsilon(d.pool), pairs, seed);
  return d;
}

LatentConfig quick_config(std::uint64_t seed) {
  LatentConfig cfg;
  cfg.latent_dim = 8;
  cfg.hidden = {16};
  cfg.frozen_epochs = 4;
  cfg.cofinetune_epochs = 4;
  cfg.seed = seed;
  return cfg;
}

}  // namespace

TEST_CASE("encode_trajectory: zero weights give the output bias; identical sequences embed identically") {
  EncoderPair enc = small_pair(4, 3, 1);
  for (const auto& [name, p] : enc.trajectory.entries()) enc.trajectory.value(name).setZero();
  const diff::MlpSpec s = enc.trajectory_spec();
  Tensor& bias = enc.trajectory.value(s.bias_name(s.layer_count() - 1));
  bias << 0.5, -1.0, 2.0, 0.25;
  const Embedding phi = enc.encode_trajectory(two_step());
  CHECK((phi - bias.row(0).transpose()).cwiseAbs().maxCoeff() == 0.0);

  const EncoderPair rnd = small_pair(4, 3, 2);
  world::Trajectory a = two_step(), b = two_step();
  b.id = 99;
  CHECK(rnd.encode_trajectory(a) == rnd.encode_trajectory(b));
}

TEST_CASE("encode_trajectory: one affine layer on two steps equals the hand-computed mean") {
  EncoderPair enc;
  enc.latent_dim = 2;
  enc.dt = 0.1;
  Tensor w(kStepInputs, 2);
  w << 1, 0,  //
      0, 2,   //
      0.5, 0, //
      0, 1,   //
      1, 0,   //
      0, -3;
  Tensor bias(1, 2);
  bias << 0.1, -0.2;
  enc.trajectory.add("traj.0.weight", w);
  enc.trajectory.add("traj.0.bias", bias);
  // Step rows: (0.2, 0.3, 1, 0.5, -2, -1) and (0.25, 0.1, 0, 0, 0, 0).
  // Column 0: 0.2 + 0.5 - 2 + 0.1 = -1.2 and 0.25 + 0.1 = 0.35 -> mean -0.425.
  // Column 1: 0.6 + 0.5 + 3 - 0.2 = 3.9 and 0.2 - 0.2 = 0 -> mean 1.95.
  const Embedding phi = enc.encode_trajectory(two_step());
  CHECK(phi[0] == doctest::Approx(-0.425).epsilon(1e-12));
  CHECK(phi[1] == doctest::Approx(1.95).epsilon(1e-12));
}

TEST_CASE("encode_language: mean pooling, zero table and empty input") {
  const lang::Catalog c = lang::Catalog::builtin();
  const auto& v = c.vocabulary();
  EncoderPair enc = small_pair(6, v.size(), 3);
  const std::vector<int> once = lang::tokenize("faster", v), twice = lang::tokenize("faster faster", v);
  CHECK((enc.encode_language(once) - enc.encode_language(twice)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK_THROWS(enc.encode_language(std::vector<int>{}));
  CHECK_THROWS(enc.encode_language(std::vector<int>{v.size()}));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const EncoderPair e = small_pair(6, v.size(), seed);
    CHECK((e.encode_language(c.at(0).tokens) - e.encode_language(c.at(20).tokens)).norm() > 1e-9);
  }

  enc.language.value("lang.embedding").setZero();
  const Embedding psi = enc.encode_language(c.at(5).tokens);
  CHECK((psi - enc.language.value("lang.head.0.bias").row(0).transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("align_loss: orthogonal, saturated and swapped cases") {
  Embedding a(2), b(2), psi(2);
  a << 1, 0;
  b << 1, 1;
  psi << 1, 0;
  CHECK(align_loss(a, b, psi) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  psi << 0, 20;
  const double expected = std::log1p(std::exp(-20.0));
  CHECK(align_loss(a, b, psi) == doctest::Approx(expected).epsilon(1e-9));
  CHECK(align_loss(a, b, psi) == doctest::Approx(2.06e-9).epsilon(0.01));

  Rng rng = make_rng(4);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    Embedding x(3), y(3), p(3);
    for (int k = 0; k < 3; ++k) {
      x[k] = n(rng);
      y[k] = n(rng);
      p[k] = n(rng);
    }
    const double fwd = align_loss(x, y, p), bwd = align_loss(y, x, p);
    CHECK(bwd == doctest::Approx(-std::log(1.0 - std::exp(-fwd))).epsilon(1e-9));
    CHECK(fwd > 0.0);
    CHECK(norm_loss(x, y, p, 1.0, 1.0) >= 0.0);
  }
}

TEST_CASE("norm_loss: hinge and unit-norm arithmetic") {
  Embedding a(2), b(2), psi(2);
  a << 0.6, 0.8;
  b << 0.0, 0.5;
  psi << 0.0, 1.0;
  CHECK(norm_loss(a, b, psi, 1.0, 1.0) == doctest::Approx(0.0).epsilon(1e-15));
  a << 2.0, 0.0;
  CHECK(norm_loss(a, b, psi, 1.0, 7.0) == doctest::Approx(1.0).epsilon(1e-12));
  a << 0.5, 0.0;
  psi.setZero();
  CHECK(norm_loss(a, b, psi, 1.0, 1.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS(norm_loss(a, b, psi, -1.0, 1.0));
}

TEST_CASE("latent_loss: taped value equals the scalar form and gradients match finite differences") {
  Rng rng = make_rng(6);
  std::normal_distribution<double> n(0.0, 0.8);
  for (int trial = 0; trial < 10; ++trial) {
    diff::ParamSet ps;
    Tensor a(3, 5), b(3, 5), p(3, 5);
    for (Tensor* m : {&a, &b, &p}) {
      for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
    }
    ps.add("a", a);
    ps.add("b", b);
    ps.add("psi", p);
    const double wa = 0.7, wb = 1.3;
    const diff::LossBuilder build = [&](diff::Tape& t, const diff::ParamSet& q) {
      return latent_loss(t.param(q, "a"), t.param(q, "b"), t.param(q, "psi"), wa, wb);
    };
    diff::Tape tape;
    const double taped = build(tape, ps).scalar();
    double plain = 0.0;
    for (int r = 0; r < 3; ++r) {
      const Embedding ra = a.row(r).transpose(), rb = b.row(r).transpose(), rp = p.row(r).transpose();
      plain += align_loss(ra, rb, rp) + norm_loss(ra, rb, rp, wa, wb);
    }
    CHECK(taped == doctest::Approx(plain / 3.0).epsilon(1e-12));
    const diff::FiniteDiffReport rep = diff::finite_diff_check(build, ps, 1e-6, 1e-4);
    CHECK_MESSAGE(rep.passed, rep.max_relative_error);
  }
}

TEST_CASE("alignment_accuracy: psi equal to the difference scores 1; a mirror pair never both count") {
  Rng rng = make_rng(8);
  std::normal_distribution<double> n;
  Tensor a(50, 4), b(50, 4), p(50, 4);
  for (Tensor* m : {&a, &b, &p}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = n(rng);
  }
  CHECK(alignment_accuracy(a, b, b - a) == 1.0);
  CHECK(alignment_accuracy(a, b, p) + alignment_accuracy(b, a, p) == doctest::Approx(1.0));
  p.row(0).setZero();  // a tie: neither orientation counts
  CHECK(alignment_accuracy(a, b, p) + alignment_accuracy(b, a, p) == doctest::Approx(1.0 - 1.0 / 50));
  CHECK_THROWS(alignment_accuracy(a, b, Tensor(49, 4)));
}

TEST_CASE("train_latent: zero epochs return the initialization unchanged") {
  const Data d = small_data(60, 1, {60, 10, 10});
  LatentConfig cfg = quick_config(2);
  cfg.frozen_epochs = 0;
  cfg.cofinetune_epochs = 0;
  const TrainResult r = train_latent(d.ds, d.pool, d.catalog.vocabulary().size(), cfg);
  const EncoderPair init = EncoderPair::initialize(cfg, d.catalog.vocabulary().size(), d.pool.config.dt, cfg.seed);
  CHECK(r.encoders.trajectory == init.trajectory);
  CHECK(r.encoders.language == init.language);
  REQUIRE(r.history.size() == 1);
  CHECK(r.history[0].phase == Phase::Init);
}

TEST_CASE("train_latent: frozen phase leaves the language encoder untouched; determinism") {
  const Data d = small_data(100, 3, {120, 20, 20});
  LatentConfig cfg = quick_config(5);
  cfg.cofinetune_epochs = 0;
  const int vocab = d.catalog.vocabulary().size();
  const TrainResult r = train_latent(d.ds, d.pool, vocab, cfg);
  const EncoderPair init = EncoderPair::initialize(cfg, vocab, d.pool.config.dt, cfg.seed);
  CHECK(r.encoders.language == init.language);

  cfg.cofinetune_epochs = 3;
  const TrainResult x = train_latent(d.ds, d.pool, vocab, cfg);
  const TrainResult y = train_latent(d.ds, d.pool, vocab, cfg);
  REQUIRE(x.history.size() == 8);
  for (std::size_t i = 0; i < x.history.size(); ++i) {
    CHECK(x.history[i].train_loss == y.history[i].train_loss);
    CHECK(x.history[i].val_accuracy == y.history[i].val_accuracy);
    CHECK(x.history[i].phase == (i == 0 ? Phase::Init : i <= 4 ? Phase::Frozen : Phase::Cofinetune));
  }
  CHECK(x.encoders.trajectory == y.encoders.trajectory);
  double best = 0.0;
  for (const EpochRecord& h : x.history) best = std::max(best, h.val_accuracy);
  CHECK(x.history[static_cast<std::size_t>(x.best_epoch)].val_accuracy == best);
  CHECK(accuracy(x.encoders, d.ds, world::Split::Val, d.pool) == best);
}

TEST_CASE("train_latent: train loss falls over the frozen phase") {
  const Data d = small_data(120, 7, {400, 40, 40});
  LatentConfig cfg = quick_config(7);
  cfg.frozen_epochs = 15;
  cfg.cofinetune_epochs = 0;
  const TrainResult r = train_latent(d.ds, d.pool, d.catalog.vocabulary().size(), cfg);
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
}

TEST_CASE("train_latent: two separable triplets reach full train accuracy") {
  Data d = small_data(40, 9, {0, 0, 0});
  const auto train = d.pool.in_split(world::Split::Train);
  const lang::Utterance& higher = d.catalog.at(d.catalog.indices(0, 1)[0]);
  const world::PoolItem* lo = train[0];
  const world::PoolItem* hi = train[1];
  for (const world::PoolItem* it : train) {
    if (it->features[0] < lo->features[0]) lo = it;
    if (it->features[0] > hi->features[0]) hi = it;
  }
  d.ds.items = {{lo->trajectory.id, hi->trajectory.id, higher, world::Split::Train},
                {hi->trajectory.id, lo->trajectory.id, d.catalog.at(d.catalog.indices(0, -1)[0]), world::Split::Train}};
  LatentConfig cfg = quick_config(11);
  cfg.frozen_epochs = 100;
  cfg.cofinetune_epochs = 100;
  const TrainResult r = train_latent(d.ds, d.pool, d.catalog.vocabulary().size(), cfg);
  CHECK(accuracy(r.encoders, d.ds, world::Split::Train, d.pool) == 1.0);
}

TEST_CASE("train_latent: non-finite inputs abort with the epoch index; empty train split is rejected") {
  Data d = small_data(40, 13, {30, 5, 5});
  const int bad = d.ds.in_split(world::Split::Train).front()->a_id;
  for (world::PoolItem& it : d.pool.items) {
    if (it.trajectory.id == bad) it.trajectory.states[3].x = std::nan("");
  }
  LatentConfig cfg = quick_config(1);
  cfg.frozen_epochs = 2;
  try {
    train_latent(d.ds, d.pool, d.catalog.vocabulary().size(), cfg);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.epoch() == 1);
  }
  lang::TripletDataset empty;
  CHECK_THROWS(train_latent(empty, d.pool, d.catalog.vocabulary().size(), cfg));
}

TEST_CASE("accuracy: random encoders sit near chance") {
  const Data d = small_data(160, 17, {400, 40, 40});
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const EncoderPair e = EncoderPair::initialize(LatentConfig{}, d.catalog.vocabulary().size(), 0.1, seed);
    sum += accuracy(e, d.ds, world::Split::Train, d.pool);
  }
  CHECK(std::abs(sum / 5 - 0.5) < 0.1);
}
