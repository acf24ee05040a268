#include <doctest.h>

#include <cmath>
#include <set>

#include "langpref/worldsim.hpp"

using namespace langpref;
using namespace langpref::world;

namespace {

// Per-step oracle written against the raw arrays, independent of features().
FeatureVector oracle_features(const Trajectory& traj, const WorldConfig& c) {
  double h = 0, v = 0, p = 0;
  for (std::size_t t = 0; t < traj.states.size(); ++t) {
    h += traj.states[t].y;
    v += std::sqrt(traj.actions[t].dx * traj.actions[t].dx + traj.actions[t].dy * traj.actions[t].dy) / c.dt;
    const double ex = traj.states[t].x - c.pan.x(), ey = traj.states[t].y - c.pan.y();
    p += std::sqrt(ex * ex + ey * ey);
  }
  const double T = static_cast<double>(traj.states.size());
  const auto& last = traj.states.back();
  const double ds = std::sqrt(std::pow(last.x - c.spoon.x(), 2) + std::pow(last.y - c.spoon.y(), 2));
  double succ = 0.7 * std::max(0.0, 1.0 - ds / 0.5);
  if (last.gripper_open == 0.0 && ds < 0.08) succ += 0.3;
  return FeatureVector(h / T, v / T, p / T, std::min(1.0, succ));
}

Control straight(Point a, Point b, double speed, bool grasp = false) {
  Control c;
  c.waypoints = {a, b};
  c.speed = speed;
  c.grasp = grasp;
  return c;
}

}  // namespace

TEST_CASE("rollout: single waypoint is stationary") {
  WorldConfig c;
  Control ctl;
  ctl.waypoints = {Point(0.2, 0.5)};
  ctl.speed = 0.7;
  const Trajectory t = rollout(c, ctl);
  REQUIRE(t.size() == static_cast<std::size_t>(c.horizon));
  for (std::size_t i = 0; i < t.size(); ++i) {
    CHECK(t.states[i].x == 0.2);
    CHECK(t.states[i].y == 0.5);
    CHECK(t.actions[i].dx == 0.0);
    CHECK(t.actions[i].dy == 0.0);
    CHECK(t.actions[i].toggle == 0.0);
  }
  const FeatureVector f = features(t, c);
  CHECK(f[0] == doctest::Approx(0.5));
  CHECK(f[1] == 0.0);
}

TEST_CASE("rollout: doubling the speed doubles the mean-speed feature before the path runs out") {
  WorldConfig c;
  const Point a(0.0, 0.5), b(1.0, 0.5);
  const FeatureVector slow = features(rollout(c, straight(a, b, 0.05)), c);
  const FeatureVector fast = features(rollout(c, straight(a, b, 0.10)), c);
  CHECK(fast[1] == doctest::Approx(2.0 * slow[1]).epsilon(1e-12));
}

TEST_CASE("rollout: dynamics invariants hold and out-of-bounds waypoints are clamped and flagged") {
  WorldConfig c;
  Control ctl;
  ctl.waypoints = {Point(0.1, 0.1), Point(1.4, 0.9), Point(0.5, -0.3)};
  ctl.speed = 0.5;
  ctl.grasp = true;
  const Trajectory t = rollout(c, ctl, 3);
  CHECK(t.clamped);
  CHECK_NOTHROW(validate_trajectory(t, c));
  CHECK_FALSE(rollout(c, straight(Point(0.1, 0.1), Point(0.9, 0.9), 0.3)).clamped);
  CHECK_THROWS(rollout(c, Control{{}, 0.3, false}));
  CHECK_THROWS(rollout(c, straight(Point(0, 0), Point(1, 1), 0.0)));
}

TEST_CASE("rollout: fixed control features equal recomputation from the emitted states") {
  WorldConfig c;
  Control ctl;
  ctl.waypoints = {Point(0.1, 0.9), Point(0.4, 0.2), c.spoon};
  ctl.speed = 0.45;
  ctl.grasp = true;
  const Trajectory t = rollout(c, ctl);
  const FeatureVector f = features(t, c);
  const FeatureVector o = oracle_features(t, c);
  CHECK((f - o).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(f[3] == doctest::Approx(1.0));  // arrives at the spoon and grasps it
}

TEST_CASE("features: passing over the pan gives a smaller mean pan distance than an offset copy") {
  WorldConfig c;
  const Trajectory through = rollout(c, straight(Point(0.05, c.pan.y()), Point(0.95, c.pan.y()), 0.3));
  const Trajectory offset = rollout(c, straight(Point(0.05, c.pan.y() + 0.3), Point(0.95, c.pan.y() + 0.3), 0.3));
  CHECK(features(through, c)[2] < features(offset, c)[2]);
}

TEST_CASE("features: pool trajectories equal the per-step oracle to 1e-9") {
  WorldConfig c;
  const TrajectoryPool pool = generate_pool(c, 64, 5);
  for (const PoolItem& it : pool.items) {
    CHECK((features(it.trajectory, c) - oracle_features(it.trajectory, c)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((it.features - features(it.trajectory, c)).cwiseAbs().maxCoeff() == 0.0);
    CHECK(it.features[3] >= 0.0);
    CHECK(it.features[3] <= 1.0);
    CHECK_NOTHROW(validate_trajectory(it.trajectory, c));
  }
}

TEST_CASE("true_reward: zero, one-hot, dot product, linearity and argmax invariance") {
  WorldConfig c;
  const TrajectoryPool pool = generate_pool(c, 32, 2);
  GroundTruthReward zero;
  CHECK_THROWS(zero.validate());
  Rng rng = make_rng(9);
  std::normal_distribution<double> n;
  GroundTruthReward w;
  w.w = FeatureVector(n(rng), n(rng), n(rng), n(rng));
  for (const PoolItem& it : pool.items) {
    CHECK(true_reward(zero, it.trajectory, c) == 0.0);
    for (int d = 0; d < kFeatureCount; ++d) {
      GroundTruthReward e;
      e.w[d] = 1.0;
      CHECK(true_reward(e, it.trajectory, c) == it.features[d]);
    }
    double dot = 0.0;
    for (int d = 0; d < kFeatureCount; ++d) dot += w.w[d] * it.features[d];
    CHECK(true_reward(w, it.features) == doctest::Approx(dot).epsilon(1e-14));
    GroundTruthReward scaled;
    scaled.w = -2.5 * w.w;
    CHECK(true_reward(scaled, it.features) == doctest::Approx(-2.5 * true_reward(w, it.features)));
  }
  auto argmax = [&](const GroundTruthReward& r) {
    int best = -1;
    double bv = -1e300;
    for (const PoolItem& it : pool.items) {
      const double v = true_reward(r, it.features);
      if (v > bv) {
        bv = v;
        best = it.trajectory.id;
      }
    }
    return best;
  };
  GroundTruthReward big;
  big.w = 7.0 * w.w;
  CHECK(argmax(w) == argmax(big));
}

TEST_CASE("generate_pool: 16 items give one per stratum") {
  const TrajectoryPool pool = generate_pool(WorldConfig{}, 16, 3);
  std::set<int> strata;
  for (const PoolItem& it : pool.items) strata.insert(it.stratum);
  CHECK(strata.size() == 16);
}

TEST_CASE("generate_pool: strata are balanced, ids unique, ranges covered, runs deterministic") {
  WorldConfig c;
  const TrajectoryPool pool = generate_pool(c, 320, 11);
  REQUIRE(pool.items.size() == 320);
  std::vector<int> per(16, 0);
  std::set<int> ids;
  for (const PoolItem& it : pool.items) {
    per[static_cast<std::size_t>(it.stratum)]++;
    ids.insert(it.trajectory.id);
  }
  CHECK(ids.size() == 320);
  for (int n : per) CHECK(n == 20);

  const auto ranges = feasible_ranges(c);
  for (int d = 0; d < kFeatureCount; ++d) {
    double lo = 1e300, hi = -1e300;
    for (const PoolItem& it : pool.items) {
      lo = std::min(lo, it.features[d]);
      hi = std::max(hi, it.features[d]);
    }
    CHECK(hi - lo >= 0.5 * (ranges[d].second - ranges[d].first));
  }

  const TrajectoryPool again = generate_pool(c, 320, 11);
  for (std::size_t i = 0; i < pool.items.size(); ++i) {
    CHECK(pool.items[i].features == again.items[i].features);
  }
  CHECK_THROWS(generate_pool(c, 9, 1));
}

TEST_CASE("split: ratio arithmetic, disjoint cover and determinism") {
  WorldConfig c;
  TrajectoryPool pool = generate_pool(c, 100, 1);
  split(pool, SplitRatios{0.8, 0.1, 0.1}, 4);
  CHECK(pool.count(Split::Train) == 80);
  CHECK(pool.count(Split::Val) == 10);
  CHECK(pool.count(Split::Test) == 10);

  TrajectoryPool again = generate_pool(c, 100, 1);
  split(again, SplitRatios{0.8, 0.1, 0.1}, 4);
  for (std::size_t i = 0; i < pool.items.size(); ++i) CHECK(pool.items[i].split == again.items[i].split);

  split(pool, SplitRatios{1.0, 0.0, 0.0}, 4);
  CHECK(pool.count(Split::Train) == 100);

  TrajectoryPool big = generate_pool(c, 448, 1);
  split(big, SplitRatios{0.8, 0.1, 0.1}, 4);
  CHECK(std::abs(static_cast<int>(big.count(Split::Train)) - 359) <= 1);
  CHECK(std::abs(static_cast<int>(big.count(Split::Val)) - 44) <= 1);
  CHECK(std::abs(static_cast<int>(big.count(Split::Test)) - 45) <= 1);
  CHECK(big.count(Split::Train) + big.count(Split::Val) + big.count(Split::Test) == 448);

  CHECK_THROWS(split(pool, SplitRatios{0.5, 0.2, 0.2}, 1));
  TrajectoryPool tiny;
  tiny.items.resize(9);
  CHECK_THROWS(split(tiny, SplitRatios{}, 1));
}
