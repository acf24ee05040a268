#include "langpref/simhuman.hpp"

#include <cmath>
#include <stdexcept>

#include "langpref/diffcore.hpp"

namespace langpref::sim {

SimulatedHuman SimulatedHuman::for_pool(const world::GroundTruthReward& reward, const world::TrajectoryPool& pool,
                                        double beta) {
  if (pool.items.empty()) throw std::invalid_argument("pool is empty");
  SimulatedHuman h;
  h.reward = reward;
  h.beta = beta;
  bool found = false;
  double best = 0.0;
  for (const world::PoolItem& it : pool.items) {
    const double r = world::true_reward(reward, it.features);
    if (!found || r > best || (r == best && it.trajectory.id < h.optimal_id)) {
      found = true;
      best = r;
      h.optimal_id = it.trajectory.id;
      h.optimal_features = it.features;
    }
  }
  h.validate();
  return h;
}

void SimulatedHuman::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw std::invalid_argument("feedback temperature must be positive");
  if (!reward.w.allFinite()) throw std::invalid_argument("reward weights must be finite");
}

world::GroundTruthReward draw_reward(Rng& rng, double norm) {
  if (!(norm > 0.0)) throw std::invalid_argument("reward norm must be positive");
  std::normal_distribution<double> n;
  world::GroundTruthReward r;
  do {
    for (int d = 0; d < world::kFeatureCount; ++d) r.w[d] = n(rng);
  } while (r.w.norm() == 0.0);
  r.w *= norm / r.w.norm();
  return r;
}

FeatureProbs feedback_distribution(const SimulatedHuman& h, const world::FeatureVector& theta) {
  FeatureProbs p{};
  const world::FeatureVector delta = h.optimal_features - theta;
  double top = -INFINITY;
  for (int d = 0; d < world::kFeatureCount; ++d) {
    if (delta[d] != 0.0) top = std::max(top, h.beta * h.reward.w[d] * delta[d]);
  }
  if (top == -INFINITY) return p;
  double total = 0.0;
  for (int d = 0; d < world::kFeatureCount; ++d) {
    if (delta[d] == 0.0) continue;
    p[static_cast<std::size_t>(d)] = std::exp(h.beta * h.reward.w[d] * delta[d] - top);
    total += p[static_cast<std::size_t>(d)];
  }
  for (double& x : p) x /= total;
  return p;
}

std::optional<lang::Utterance> language_feedback(const SimulatedHuman& h, const world::FeatureVector& theta,
                                                 const lang::Catalog& catalog, Rng& rng) {
  const FeatureProbs p = feedback_distribution(h, theta);
  double total = 0.0;
  for (double x : p) total += x;
  if (total == 0.0) return std::nullopt;
  std::discrete_distribution<int> pick(p.begin(), p.end());
  const int d = pick(rng);
  const int dir = h.optimal_features[d] > theta[d] ? 1 : -1;
  const auto idx = catalog.indices(d, dir);
  if (idx.empty()) {
    throw std::runtime_error(std::string("catalog has no utterances for ") +
                             world::feature_name(static_cast<world::Feature>(d)));
  }
  std::uniform_int_distribution<std::size_t> u(0, idx.size() - 1);
  return catalog.at(idx[u(rng)]);
}

double choice_probability(const world::GroundTruthReward& reward, const world::FeatureVector& theta_a,
                          const world::FeatureVector& theta_b) {
  return diff::sigmoid(world::true_reward(reward, theta_a) - world::true_reward(reward, theta_b));
}

bool comparison_choice(const SimulatedHuman& h, const world::FeatureVector& theta_a,
                       const world::FeatureVector& theta_b, Rng& rng) {
  std::bernoulli_distribution b(choice_probability(h.reward, theta_a, theta_b));
  return b(rng);
}

}  // namespace langpref::sim
