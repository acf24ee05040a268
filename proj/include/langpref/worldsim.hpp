#pragma once

// Planar toy kitchen: a point end-effector moving over a table with a pan
// (to avoid) and a spoon (to pick up). Generates trajectories with
// controllable hand-crafted features and scores them with linear rewards.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "langpref/rng.hpp"

namespace langpref::world {

inline constexpr int kFeatureCount = 4;

enum class Feature : int { Height = 0, Speed = 1, PanDistance = 2, Success = 3 };

const char* feature_name(Feature f);
std::optional<Feature> feature_from_name(const std::string& name);

using Point = Eigen::Vector2d;
/// Per-step means of height (m), speed (m/s), distance to the pan (m) and task success in [0,1].
using FeatureVector = Eigen::Vector4d;

struct WorldConfig {
  double x_min = 0.0;
  double x_max = 1.0;
  double y_min = 0.0;
  double y_max = 1.0;
  Point pan{0.35, 0.35};
  Point spoon{0.8, 0.6};
  int horizon = 64;
  double dt = 0.1;

  void validate() const;
  bool inside(const Point& p) const;
  Point clamp(const Point& p) const;
};

struct State {
  double x = 0.0;
  double y = 0.0;
  double gripper_open = 1.0;  // 1 open, 0 closed
};

struct Action {
  double dx = 0.0;
  double dy = 0.0;
  double toggle = 0.0;  // -1 closes the gripper, +1 opens it
};

struct Trajectory {
  int id = 0;
  std::vector<State> states;
  std::vector<Action> actions;
  bool clamped = false;  // a waypoint had to be pulled back inside the workspace

  std::size_t size() const { return states.size(); }
};

/// Scripted rollout parameters. The first waypoint is the start position.
struct Control {
  std::vector<Point> waypoints;
  double speed = 0.3;  // cruise speed, m/s
  bool grasp = false;  // close the gripper on arrival at the last waypoint
};

/// Number of steps over which the end-effector accelerates from rest.
inline constexpr int kRampSteps = 6;
inline constexpr double kSuccessDistance = 0.5;
inline constexpr double kGraspRadius = 0.08;
inline constexpr double kSuccessDistanceWeight = 0.7;
inline constexpr double kSuccessGraspWeight = 0.3;

/// Constant-speed traversal of the waypoint polyline after a smoothstep
/// ramp-up. Per-step displacement is proportional to `speed` until the path is
/// exhausted; the end-effector then holds its position.
Trajectory rollout(const WorldConfig& config, const Control& control, int id = 0);

FeatureVector features(const Trajectory& traj, const WorldConfig& config);

/// Checks the dynamics invariants: T pairs, states inside bounds, s_{t+1} = s_t + a_t.
void validate_trajectory(const Trajectory& traj, const WorldConfig& config);

struct GroundTruthReward {
  FeatureVector w = FeatureVector::Zero();
  void validate() const;
};

double true_reward(const GroundTruthReward& reward, const FeatureVector& theta);
double true_reward(const GroundTruthReward& reward, const Trajectory& traj, const WorldConfig& config);

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };
const char* split_name(Split s);
Split split_from_name(const std::string& name);

struct PoolItem {
  Trajectory trajectory;
  FeatureVector features = FeatureVector::Zero();
  Split split = Split::Train;
  int stratum = 0;
  bool fallback = false;  // stratum could not be hit; nearest feasible control used
};

struct TrajectoryPool {
  WorldConfig config;
  std::vector<PoolItem> items;

  const PoolItem& by_id(int id) const;
  std::vector<const PoolItem*> in_split(Split s) const;
  std::size_t count(Split s) const;
};

/// Low/high cut per feature used to define the 2^D strata.
struct StrataThresholds {
  FeatureVector cut = FeatureVector::Zero();
};

/// Feasible range of each feature in the toy world, used for coverage checks.
std::array<std::pair<double, double>, kFeatureCount> feasible_ranges(const WorldConfig& config);

/// Stratified pool: every low/high combination of the four features receives
/// floor(count/16) or one more trajectory. Ids are 0..count-1, all train until split().
TrajectoryPool generate_pool(const WorldConfig& config, int count, std::uint64_t seed);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  void validate() const;
};

/// Seeded shuffle, then train/val counts rounded from the ratios; test takes the rest.
void split(TrajectoryPool& pool, const SplitRatios& ratios, std::uint64_t seed);

}  // namespace langpref::world
