#pragma once

// Synthetic users: noisy comparative-language feedback toward an optimal
// trajectory, and Boltzmann-rational pairwise choices.

#include <array>
#include <optional>

#include "langpref/langcat.hpp"
#include "langpref/rng.hpp"
#include "langpref/worldsim.hpp"

namespace langpref::sim {

struct SimulatedHuman {
  world::GroundTruthReward reward;
  int optimal_id = 0;
  world::FeatureVector optimal_features = world::FeatureVector::Zero();
  double beta = 1.0;

  /// Optimum is the argmax of w . theta over the pool, lowest id on ties.
  static SimulatedHuman for_pool(const world::GroundTruthReward& reward, const world::TrajectoryPool& pool,
                                 double beta = 1.0);
  void validate() const;
};

/// w drawn from a standard normal and rescaled to `norm`.
world::GroundTruthReward draw_reward(Rng& rng, double norm);

using FeatureProbs = std::array<double, world::kFeatureCount>;

/// Softmax of beta * w * (theta_opt - theta) over features whose difference is
/// nonzero; the rest get probability 0. All zeros when theta equals the optimum.
FeatureProbs feedback_distribution(const SimulatedHuman& h, const world::FeatureVector& theta);

/// Empty when the shown trajectory already has the optimal features.
std::optional<lang::Utterance> language_feedback(const SimulatedHuman& h, const world::FeatureVector& theta,
                                                 const lang::Catalog& catalog, Rng& rng);

/// P(A preferred over B) = sigmoid(w . theta_a - w . theta_b).
double choice_probability(const world::GroundTruthReward& reward, const world::FeatureVector& theta_a,
                          const world::FeatureVector& theta_b);

/// True when A is chosen.
bool comparison_choice(const SimulatedHuman& h, const world::FeatureVector& theta_a,
                       const world::FeatureVector& theta_b, Rng& rng);

}  // namespace langpref::sim
