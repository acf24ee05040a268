#include "langpref/improver.hpp"

#include <algorithm>
#include <stdexcept>

namespace langpref::improve {

Objective ImproverConfig::objective_from_name(const std::string& name) {
  if (name == "printed") return Objective::Printed;
  if (name == "cosine") return Objective::Cosine;
  throw std::invalid_argument("unknown improvement objective '" + name + "'");
}

const char* objective_name(Objective o) { return o == Objective::Printed ? "printed" : "cosine"; }

std::optional<double> improvement_objective(const Embedding& candidate, const Embedding& current, const Embedding& psi,
                                            Objective objective) {
  if (candidate.size() != current.size() || candidate.size() != psi.size()) {
    throw diff::ShapeError("improvement_objective: d_z mismatch");
  }
  const Embedding delta = candidate - current;
  if (objective == Objective::Printed) {
    const double denom = candidate.norm() * current.norm();
    if (!(denom > 0.0)) return std::nullopt;
    return psi.dot(delta) / denom;
  }
  const double pn = psi.norm();
  if (!(pn > 0.0)) return std::nullopt;
  const double dn = delta.norm();
  if (dn == 0.0) return 0.0;
  return psi.dot(delta) / (pn * dn);
}

CandidateSet CandidateSet::from_pool(const latent::EncoderPair& enc, const world::TrajectoryPool& pool) {
  if (pool.items.empty()) throw std::invalid_argument("candidate pool is empty");
  std::vector<const world::PoolItem*> items;
  for (const world::PoolItem& it : pool.items) items.push_back(&it);
  std::sort(items.begin(), items.end(),
            [](const world::PoolItem* a, const world::PoolItem* b) { return a->trajectory.id < b->trajectory.id; });
  CandidateSet c;
  std::vector<const world::Trajectory*> trajs;
  for (const world::PoolItem* it : items) {
    c.ids.push_back(it->trajectory.id);
    c.features.push_back(it->features);
    trajs.push_back(&it->trajectory);
  }
  c.embeddings = enc.encode_trajectories(trajs);
  return c;
}

std::size_t CandidateSet::row_of(int id) const {
  auto it = std::lower_bound(ids.begin(), ids.end(), id);
  if (it == ids.end() || *it != id) throw std::out_of_range("trajectory " + std::to_string(id) + " is not a candidate");
  return static_cast<std::size_t>(it - ids.begin());
}

StepResult improve_step(const CandidateSet& candidates, int current_id, const Embedding& psi, const ImproverConfig& cfg,
                        std::optional<int> excluded) {
  if (candidates.size() == 0) throw std::invalid_argument("candidate pool is empty");
  const std::size_t cur_row = candidates.row_of(current_id);
  const Embedding current = candidates.embeddings.row(static_cast<Eigen::Index>(cur_row)).transpose();
  StepResult best;
  best.chosen_id = current_id;
  bool found = false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const int id = candidates.ids[i];
    if (excluded && id == *excluded && id != current_id) continue;
    const Embedding phi = candidates.embeddings.row(static_cast<Eigen::Index>(i)).transpose();
    const std::optional<double> score = improvement_objective(phi, current, psi, cfg.objective);
    if (!score) {
      ++best.skipped;
      continue;
    }
    // Ids ascend, so strict improvement keeps the lowest id on ties.
    if (!found || *score > best.objective) {
      best.chosen_id = id;
      best.objective = *score;
      found = true;
    }
  }
  if (!found) {
    best.chosen_id = current_id;
    best.objective = 0.0;
    best.all_skipped = true;
  }
  return best;
}

ImprovementTrace improve_loop(const CandidateSet& candidates, int start_id, const FeedbackSource& source, int rounds,
                              const latent::EncoderPair& enc, const std::optional<world::GroundTruthReward>& reward,
                              const ImproverConfig& cfg) {
  if (rounds < 1) throw std::invalid_argument("improvement needs at least one round");
  ImprovementTrace trace;
  int shown = start_id;
  std::optional<int> previous;
  for (int i = 0; i <= rounds; ++i) {
    const std::size_t row = candidates.row_of(shown);
    TraceEntry e;
    e.iteration = i;
    e.shown_id = shown;
    e.chosen_id = shown;
    if (reward) e.true_reward = world::true_reward(*reward, candidates.features[row]);
    if (i < rounds) {
      std::optional<lang::Utterance> utt;
      try {
        utt = source(shown, candidates.features[row]);
      } catch (const std::exception& ex) {
        trace.entries.push_back(e);
        trace.complete = false;
        trace.failure = ex.what();
        return trace;
      }
      if (utt) {
        e.utterance = utt->text;
        const StepResult step = improve_step(candidates, shown, enc.encode_language(utt->tokens), cfg,
                                             cfg.tabu ? previous : std::nullopt);
        if (step.all_skipped) ++trace.warnings;
        e.chosen_id = step.chosen_id;
        e.objective = step.objective;
      }
    }
    trace.entries.push_back(e);
    if (e.chosen_id != shown) previous = shown;
    shown = e.chosen_id;
  }
  return trace;
}

}  // namespace langpref::improve
