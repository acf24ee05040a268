#pragma once

// Language-guided trajectory improvement over a fixed candidate pool.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "langpref/latent.hpp"

namespace langpref::improve {

using latent::Embedding;
using latent::Tensor;

enum class Objective {
  Printed,  // psi . (phi' - phi0) / (|phi'| |phi0|)
  Cosine,   // cos(psi, phi' - phi0)
};

struct ImproverConfig {
  Objective objective = Objective::Printed;
  bool tabu = false;  // exclude the previously shown trajectory

  static Objective objective_from_name(const std::string& name);
};

const char* objective_name(Objective o);

/// Empty when a norm in the denominator is zero (the candidate is skipped).
/// Under Cosine a candidate equal to the current trajectory scores 0.
std::optional<double> improvement_objective(const Embedding& candidate, const Embedding& current,
                                            const Embedding& psi, Objective objective = Objective::Printed);

/// Embeddings and features of the searchable trajectories, ids ascending.
struct CandidateSet {
  std::vector<int> ids;
  Tensor embeddings;  // one row per id
  std::vector<world::FeatureVector> features;

  static CandidateSet from_pool(const latent::EncoderPair& enc, const world::TrajectoryPool& pool);
  /// Row of `id`; throws std::out_of_range when absent.
  std::size_t row_of(int id) const;
  std::size_t size() const { return ids.size(); }
};

struct StepResult {
  int chosen_id = 0;
  double objective = 0.0;
  std::size_t skipped = 0;
  bool all_skipped = false;  // nothing scorable; the current trajectory is returned
};

/// Argmax over the candidates (the current trajectory always included, `excluded`
/// never unless it is the current one). Ties go to the lowest id.
StepResult improve_step(const CandidateSet& candidates, int current_id, const Embedding& psi,
                        const ImproverConfig& cfg = {}, std::optional<int> excluded = std::nullopt);

/// Returns feedback on the shown trajectory; empty means nothing to change.
/// Throwing counts as a source failure.
using FeedbackSource = std::function<std::optional<lang::Utterance>(int shown_id, const world::FeatureVector& features)>;

struct TraceEntry {
  int iteration = 0;
  int shown_id = 0;
  std::string utterance;  // empty on the last entry or when the source had nothing to say
  int chosen_id = 0;
  double objective = 0.0;
  std::optional<double> true_reward;  // of the shown trajectory
};

struct ImprovementTrace {
  std::vector<TraceEntry> entries;  // N + 1 when complete
  bool complete = true;
  std::string failure;
  std::size_t warnings = 0;
};

ImprovementTrace improve_loop(const CandidateSet& candidates, int start_id, const FeedbackSource& source, int rounds,
                              const latent::EncoderPair& enc, const std::optional<world::GroundTruthReward>& reward,
                              const ImproverConfig& cfg = {});

}  // namespace langpref::improve
