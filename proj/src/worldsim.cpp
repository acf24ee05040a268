#include "langpref/worldsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace langpref::world {

namespace {

constexpr double kMinSpeed = 0.03;
constexpr double kMaxSpeed = 0.6;
constexpr int kMaxIntermediate = 3;
constexpr int kCalibrationControls = 1024;
constexpr int kAttemptsPerItem = 400;
constexpr double kSpoonApproachRadius = 0.06;

double smoothstep(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return u * u * (3.0 - 2.0 * u);
}

struct Polyline {
  std::vector<Point> points;
  std::vector<double> cumulative;  // arc length at each point

  explicit Polyline(std::vector<Point> pts) : points(std::move(pts)) {
    cumulative.resize(points.size(), 0.0);
    for (std::size_t i = 1; i < points.size(); ++i) {
      cumulative[i] = cumulative[i - 1] + (points[i] - points[i - 1]).norm();
    }
  }

  double length() const { return cumulative.back(); }

  Point at(double s) const {
    if (s <= 0.0) return points.front();
    if (s >= length()) return points.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), s);
    const std::size_t hi = static_cast<std::size_t>(it - cumulative.begin());
    const std::size_t lo = hi - 1;
    const double seg = cumulative[hi] - cumulative[lo];
    const double u = seg > 0.0 ? (s - cumulative[lo]) / seg : 0.0;
    return points[lo] + u * (points[hi] - points[lo]);
  }
};

Point uniform_point(const WorldConfig& c, Rng& rng) {
  std::uniform_real_distribution<double> ux(c.x_min, c.x_max), uy(c.y_min, c.y_max);
  const double x = ux(rng);
  return Point(x, uy(rng));
}

Control random_control(const WorldConfig& c, Rng& rng) {
  Control ctl;
  ctl.waypoints.push_back(uniform_point(c, rng));
  std::uniform_int_distribution<int> n_mid(0, kMaxIntermediate);
  const int mids = n_mid(rng);
  for (int i = 0; i < mids; ++i) ctl.waypoints.push_back(uniform_point(c, rng));
  std::bernoulli_distribution near_spoon(0.5);
  if (near_spoon(rng)) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI), radius(0.0, kSpoonApproachRadius);
    const double a = angle(rng);
    const double r = radius(rng);
    ctl.waypoints.push_back(c.clamp(c.spoon + r * Point(std::cos(a), std::sin(a))));
  } else {
    ctl.waypoints.push_back(uniform_point(c, rng));
  }
  std::uniform_real_distribution<double> speed(kMinSpeed, kMaxSpeed);
  ctl.speed = speed(rng);
  std::bernoulli_distribution grasp(0.5);
  ctl.grasp = grasp(rng);
  return ctl;
}

int stratum_of(const FeatureVector& f, const StrataThresholds& t) {
  int s = 0;
  for (int d = 0; d < kFeatureCount; ++d) {
    if (f[d] > t.cut[d]) s |= 1 << d;
  }
  return s;
}

// How far a feature vector is from lying in stratum `target`, in units of each feature's feasible range.
double stratum_miss(const FeatureVector& f, const StrataThresholds& t, int target,
                    const std::array<std::pair<double, double>, kFeatureCount>& ranges) {
  double miss = 0.0;
  for (int d = 0; d < kFeatureCount; ++d) {
    const bool want_high = (target >> d) & 1;
    const bool is_high = f[d] > t.cut[d];
    if (want_high != is_high) {
      miss += std::abs(f[d] - t.cut[d]) / (ranges[d].second - ranges[d].first);
    }
  }
  return miss;
}

}  // namespace

const char* feature_name(Feature f) {
  switch (f) {
    case Feature::Height: return "height";
    case Feature::Speed: return "speed";
    case Feature::PanDistance: return "pan_distance";
    case Feature::Success: return "success";
  }
  return "?";
}

std::optional<Feature> feature_from_name(const std::string& name) {
  for (int d = 0; d < kFeatureCount; ++d) {
    if (name == feature_name(static_cast<Feature>(d))) return static_cast<Feature>(d);
  }
  return std::nullopt;
}

void WorldConfig::validate() const {
  if (!(x_max > x_min) || !(y_max > y_min)) throw std::invalid_argument("workspace bounds are empty");
  if (!inside(pan)) throw std::invalid_argument("pan lies outside the workspace");
  if (!inside(spoon)) throw std::invalid_argument("spoon lies outside the workspace");
  if (horizon < 2) throw std::invalid_argument("horizon must be at least 2");
  if (!(dt > 0.0)) throw std::invalid_argument("time step must be positive");
}

bool WorldConfig::inside(const Point& p) const {
  return p.x() >= x_min && p.x() <= x_max && p.y() >= y_min && p.y() <= y_max;
}

Point WorldConfig::clamp(const Point& p) const {
  return Point(std::clamp(p.x(), x_min, x_max), std::clamp(p.y(), y_min, y_max));
}

Trajectory rollout(const WorldConfig& config, const Control& control, int id) {
  config.validate();
  if (control.waypoints.empty()) throw std::invalid_argument("control needs at least one waypoint");
  if (!(control.speed > 0.0)) throw std::invalid_argument("speed scale must be positive");

  Trajectory traj;
  traj.id = id;
  std::vector<Point> pts;
  pts.reserve(control.waypoints.size());
  for (const Point& w : control.waypoints) {
    if (!config.inside(w)) traj.clamped = true;
    pts.push_back(config.clamp(w));
  }
  const Polyline path(std::move(pts));

  const int T = config.horizon;
  std::vector<Point> pos(static_cast<std::size_t>(T) + 1);
  std::vector<double> grip(static_cast<std::size_t>(T) + 1, 1.0);
  double s = 0.0;
  bool arrived = path.length() == 0.0;
  pos[0] = path.at(0.0);
  for (int t = 0; t < T; ++t) {
    const double ramp = t < kRampSteps ? smoothstep(static_cast<double>(t + 1) / kRampSteps) : 1.0;
    s = std::min(path.length(), s + control.speed * config.dt * ramp);
    pos[t + 1] = path.at(s);
    grip[t + 1] = (control.grasp && arrived) ? 0.0 : grip[t];
    if (s >= path.length()) arrived = true;
  }

  traj.states.resize(static_cast<std::size_t>(T));
  traj.actions.resize(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    const std::size_t i = static_cast<std::size_t>(t);
    traj.states[i] = State{pos[i].x(), pos[i].y(), grip[i]};
    traj.actions[i] = Action{pos[i + 1].x() - pos[i].x(), pos[i + 1].y() - pos[i].y(), grip[i + 1] - grip[i]};
  }
  return traj;
}

FeatureVector features(const Trajectory& traj, const WorldConfig& config) {
  const std::size_t T = traj.states.size();
  if (T == 0 || traj.actions.size() != T) throw std::invalid_argument("trajectory has no steps");
  double height = 0.0, speed = 0.0, pan = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const State& s = traj.states[t];
    const Action& a = traj.actions[t];
    height += s.y;
    speed += std::hypot(a.dx, a.dy) / config.dt;
    pan += std::hypot(s.x - config.pan.x(), s.y - config.pan.y());
  }
  const State& last = traj.states.back();
  const double d_spoon = std::hypot(last.x - config.spoon.x(), last.y - config.spoon.y());
  const double grasped = (last.gripper_open < 0.5 && d_spoon < kGraspRadius) ? 1.0 : 0.0;
  const double success = std::clamp(
      kSuccessDistanceWeight * std::max(0.0, 1.0 - d_spoon / kSuccessDistance) + kSuccessGraspWeight * grasped, 0.0,
      1.0);
  const double n = static_cast<double>(T);
  return FeatureVector(height / n, speed / n, pan / n, success);
}

void validate_trajectory(const Trajectory& traj, const WorldConfig& config) {
  const std::size_t T = static_cast<std::size_t>(config.horizon);
  if (traj.states.size() != T || traj.actions.size() != T) {
    throw std::invalid_argument("trajectory " + std::to_string(traj.id) + " does not have " + std::to_string(T) +
                                " state-action pairs");
  }
  constexpr double kTol = 1e-9;
  for (std::size_t t = 0; t < T; ++t) {
    const State& s = traj.states[t];
    if (!config.inside(Point(s.x, s.y))) {
      throw std::invalid_argument("trajectory " + std::to_string(traj.id) + " leaves the workspace at step " +
                                  std::to_string(t));
    }
    if (t + 1 < T) {
      const State& n = traj.states[t + 1];
      const Action& a = traj.actions[t];
      if (std::abs(s.x + a.dx - n.x) > kTol || std::abs(s.y + a.dy - n.y) > kTol ||
          std::abs(s.gripper_open + a.toggle - n.gripper_open) > kTol) {
        throw std::invalid_argument("trajectory " + std::to_string(traj.id) + " breaks dynamics at step " +
                                    std::to_string(t));
      }
    }
  }
}

void GroundTruthReward::validate() const {
  if (!w.allFinite()) throw std::invalid_argument("reward weights must be finite");
  if (w.isZero(0.0)) throw std::invalid_argument("reward weights must have a nonzero component");
}

double true_reward(const GroundTruthReward& reward, const FeatureVector& theta) { return reward.w.dot(theta); }

double true_reward(const GroundTruthReward& reward, const Trajectory& traj, const WorldConfig& config) {
  return true_reward(reward, features(traj, config));
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw std::invalid_argument("unknown split: " + name);
}

const PoolItem& TrajectoryPool::by_id(int id) const {
  if (id >= 0 && static_cast<std::size_t>(id) < items.size() && items[static_cast<std::size_t>(id)].trajectory.id == id) {
    return items[static_cast<std::size_t>(id)];
  }
  for (const PoolItem& it : items) {
    if (it.trajectory.id == id) return it;
  }
  throw std::out_of_range("no trajectory with id " + std::to_string(id));
}

std::vector<const PoolItem*> TrajectoryPool::in_split(Split s) const {
  std::vector<const PoolItem*> out;
  for (const PoolItem& it : items) {
    if (it.split == s) out.push_back(&it);
  }
  return out;
}

std::size_t TrajectoryPool::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [s](const PoolItem& i) { return i.split == s; }));
}

std::array<std::pair<double, double>, kFeatureCount> feasible_ranges(const WorldConfig& config) {
  double far = 0.0;
  for (double x : {config.x_min, config.x_max}) {
    for (double y : {config.y_min, config.y_max}) far = std::max(far, (Point(x, y) - config.pan).norm());
  }
  return {{{config.y_min, config.y_max}, {0.0, kMaxSpeed}, {0.0, far}, {0.0, 1.0}}};
}

TrajectoryPool generate_pool(const WorldConfig& config, int count, std::uint64_t seed) {
  config.validate();
  if (count < 10) throw std::invalid_argument("pool size must be at least 10");
  constexpr int kStrata = 1 << kFeatureCount;
  Rng rng = make_rng(seed, stream::kPool);

  // Median cut per feature from a calibration batch of random controls.
  StrataThresholds thresholds;
  {
    std::vector<std::vector<double>> samples(kFeatureCount);
    for (int i = 0; i < kCalibrationControls; ++i) {
      const FeatureVector f = features(rollout(config, random_control(config, rng)), config);
      for (int d = 0; d < kFeatureCount; ++d) samples[d].push_back(f[d]);
    }
    for (int d = 0; d < kFeatureCount; ++d) {
      auto& v = samples[d];
      std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
      thresholds.cut[d] = v[v.size() / 2];
    }
  }

  std::array<int, kStrata> quota{};
  for (int s = 0; s < kStrata; ++s) quota[s] = count / kStrata + (s < count % kStrata ? 1 : 0);

  struct Candidate {
    Control control;
    FeatureVector features;
  };
  std::array<std::vector<Candidate>, kStrata> accepted;
  // Closest miss per stratum, used when a stratum is infeasible within the attempt budget.
  std::array<std::vector<std::pair<double, Candidate>>, kStrata> near_misses;
  const auto ranges = feasible_ranges(config);

  int remaining = count;
  const long budget = static_cast<long>(count) * kAttemptsPerItem;
  for (long attempt = 0; attempt < budget && remaining > 0; ++attempt) {
    Control ctl = random_control(config, rng);
    const FeatureVector f = features(rollout(config, ctl), config);
    const int s = stratum_of(f, thresholds);
    if (static_cast<int>(accepted[s].size()) < quota[s]) {
      accepted[s].push_back(Candidate{std::move(ctl), f});
      --remaining;
      continue;
    }
    for (int target = 0; target < kStrata; ++target) {
      if (static_cast<int>(accepted[target].size()) >= quota[target]) continue;
      auto& misses = near_misses[target];
      const double miss = stratum_miss(f, thresholds, target, ranges);
      const std::size_t need = static_cast<std::size_t>(quota[target]);
      if (misses.size() < need || miss < misses.back().first) {
        misses.emplace_back(miss, Candidate{ctl, f});
        std::stable_sort(misses.begin(), misses.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        if (misses.size() > need) misses.pop_back();
      }
    }
  }

  TrajectoryPool pool;
  pool.config = config;
  pool.items.reserve(static_cast<std::size_t>(count));
  int next_id = 0;
  for (int s = 0; s < kStrata; ++s) {
    auto emit = [&](const Candidate& c, bool fallback) {
      PoolItem item;
      item.trajectory = rollout(config, c.control, next_id++);
      item.features = c.features;
      item.stratum = s;
      item.fallback = fallback;
      pool.items.push_back(std::move(item));
    };
    for (const Candidate& c : accepted[s]) emit(c, false);
    const int missing = quota[s] - static_cast<int>(accepted[s].size());
    for (int i = 0; i < missing; ++i) {
      if (static_cast<std::size_t>(i) >= near_misses[s].size()) {
        throw std::runtime_error("could not fill stratum " + std::to_string(s));
      }
      emit(near_misses[s][static_cast<std::size_t>(i)].second, true);
    }
  }
  return pool;
}

void SplitRatios::validate() const {
  if (train < 0.0 || val < 0.0 || test < 0.0) throw std::invalid_argument("split ratios must be nonnegative");
  if (std::abs(train + val + test - 1.0) > 1e-9) throw std::invalid_argument("split ratios must sum to 1");
}

void split(TrajectoryPool& pool, const SplitRatios& ratios, std::uint64_t seed) {
  ratios.validate();
  const std::size_t n = pool.items.size();
  if (n < 10) throw std::invalid_argument("cannot split a pool smaller than 10");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, stream::kSplit);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(ratios.val * static_cast<double>(n))));
  for (std::size_t k = 0; k < n; ++k) {
    Split s = Split::Test;
    if (k < n_train) {
      s = Split::Train;
    } else if (k < n_train + n_val) {
      s = Split::Val;
    }
    pool.items[order[k]].split = s;
  }
}

}  // namespace langpref::world
