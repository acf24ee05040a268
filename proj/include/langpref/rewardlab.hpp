#pragma once

// Reward learning over latent embeddings: comparative-language queries
// (explicit and implicit preference terms), the pairwise-comparison baseline,
// and the evaluation metrics used for learning curves.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "langpref/latent.hpp"

namespace langpref::reward {

using latent::Embedding;
using latent::Tensor;

/// exp(x) / (exp(x) + exp(y)) without overflow.
double bt_prob(double rx, double ry);

enum class LossMode { Full, ExplicitOnly, ImplicitOnly };
const char* loss_mode_name(LossMode m);
LossMode loss_mode_from_name(const std::string& name);

struct RewardConfig {
  std::vector<int> hidden{32, 32};
  double learning_rate = 1e-2;
  int epochs_per_query = 30;
  double weight_decay = 0.01;  // L2 penalty on weight matrices
  int negatives = 5;
  bool retrain_from_scratch = false;
  LossMode loss = LossMode::Full;
  int checkpoint_every = 5;
  int eval_pairs = 200;

  void validate() const;
};

class RewardModel {
 public:
  static RewardModel initialize(int latent_dim, const std::vector<int>& hidden, std::uint64_t seed);

  /// One reward per row.
  Eigen::VectorXd score(const Tensor& embeddings) const;
  double score(const Embedding& phi) const;
  diff::Var score(diff::Tape& tape, diff::Var embeddings) const;

  diff::ParamSet& params() { return params_; }
  const diff::ParamSet& params() const { return params_; }
  const diff::MlpSpec& spec() const { return spec_; }
  int latent_dim() const { return static_cast<int>(spec_.layers.front()); }

  /// Rebuilds the layer list from the stored parameter shapes.
  static RewardModel from_params(diff::ParamSet params);

 private:
  diff::ParamSet params_;
  diff::MlpSpec spec_{"reward", {}};
};

struct LanguageQuery {
  int shown_id = 0;
  lang::Utterance utterance;
  Embedding shown;                  // phi of the shown trajectory
  Embedding improved;               // phi + psi
  std::vector<Embedding> negatives; // phi + psi of other-class utterances
  std::vector<int> negative_catalog_indices;
};

struct ComparisonQuery {
  int a_id = 0;
  int b_id = 0;
  bool chose_a = true;
  Embedding a;
  Embedding b;
};

/// Language embeddings of every catalog utterance, computed once.
struct CatalogEmbeddings {
  const lang::Catalog* catalog = nullptr;
  Tensor psi;  // one row per catalog index

  static CatalogEmbeddings build(const latent::EncoderPair& enc, const lang::Catalog& catalog);
};

/// k negatives drawn uniformly without replacement among catalog utterances
/// outside the given utterance's (feature, direction) class.
LanguageQuery make_language_query(int shown_id, const Embedding& phi, const lang::Utterance& utterance,
                                  const Embedding& psi, const CatalogEmbeddings& cat, int k, Rng& rng);

// Taped batch losses; each is a mean over queries.
diff::Var explicit_loss(diff::Tape& tape, const RewardModel& model, const std::vector<LanguageQuery>& queries);
/// Rejects queries carrying fewer than k negatives; uses the first k.
diff::Var implicit_loss(diff::Tape& tape, const RewardModel& model, const std::vector<LanguageQuery>& queries, int k);
diff::Var language_loss(diff::Tape& tape, const RewardModel& model, const std::vector<LanguageQuery>& queries, int k,
                        LossMode mode);
diff::Var comparison_loss(diff::Tape& tape, const RewardModel& model, const std::vector<ComparisonQuery>& queries);

double explicit_loss(const RewardModel& model, const std::vector<LanguageQuery>& queries);
double implicit_loss(const RewardModel& model, const std::vector<LanguageQuery>& queries, int k);
double language_loss(const RewardModel& model, const std::vector<LanguageQuery>& queries, int k, LossMode mode);

/// Accumulates queries and continues training one model. Gateway sessions own one each.
class RewardLearner {
 public:
  RewardLearner(int latent_dim, const RewardConfig& cfg, std::uint64_t seed);

  void add(LanguageQuery q);
  void add(ComparisonQuery q);
  /// Runs the per-query epoch budget over everything accumulated so far.
  void train();

  const RewardModel& model() const { return model_; }
  const RewardConfig& config() const { return cfg_; }
  const std::vector<LanguageQuery>& language_queries() const { return language_; }
  const std::vector<ComparisonQuery>& comparison_queries() const { return comparison_; }
  std::size_t query_count() const { return language_.size() + comparison_.size(); }

 private:
  RewardConfig cfg_;
  std::uint64_t seed_;
  RewardModel model_;
  std::vector<LanguageQuery> language_;
  std::vector<ComparisonQuery> comparison_;
};

/// Held-out trajectories plus a fixed set of evaluation pairs.
struct EvalSet {
  std::vector<int> ids;
  Tensor embeddings;
  std::vector<world::FeatureVector> features;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // row indices

  /// Members of `split`, with `pair_count` distinct unordered pairs when that
  /// many exist (otherwise drawn with repetition).
  static EvalSet build(const latent::EncoderPair& enc, const world::TrajectoryPool& pool, world::Split split,
                       int pair_count, std::uint64_t seed);
};

/// Mean over pairs of the binary cross-entropy of the model's preference
/// probability against the true one.
double eval_cross_entropy(const RewardModel& model, const world::GroundTruthReward& w, const EvalSet& eval);

struct BestOfPool {
  int id = 0;
  double normalized = 0.0;
  bool degenerate = false;  // all true rewards equal; normalized is 1
};

/// Argmax of the model over the set (lowest id on ties), scored by normalized true reward.
BestOfPool best_of_pool(const RewardModel& model, const world::GroundTruthReward& w, const EvalSet& eval);

struct CurvePoint {
  int queries = 0;
  double value = 0.0;
};

struct LearningCurve {
  std::string metric;
  std::vector<CurvePoint> points;
};

/// Trapezoid area over the query axis divided by the span. Needs two or more points.
double auc(const LearningCurve& curve);

inline constexpr const char* kMetricCrossEntropy = "cross_entropy";
inline constexpr const char* kMetricTrueReward = "true_reward_of_best";

struct RewardRun {
  RewardModel model;
  LearningCurve cross_entropy{kMetricCrossEntropy, {}};
  LearningCurve true_reward{kMetricTrueReward, {}};
  int queries = 0;
  bool complete = true;
  std::string failure;
};

/// Language feedback on a shown trajectory; empty means satisfied (the query is spent without data).
using LanguageSource = std::function<std::optional<lang::Utterance>(int shown_id, const world::FeatureVector& features)>;
/// True when A is preferred.
using ChoiceSource = std::function<bool(int a_id, int b_id, const world::FeatureVector& a,
                                        const world::FeatureVector& b)>;

/// Candidates for queries: trajectories of one split with their embeddings.
struct QueryPool {
  std::vector<int> ids;
  Tensor embeddings;
  std::vector<world::FeatureVector> features;

  static QueryPool build(const latent::EncoderPair& enc, const world::TrajectoryPool& pool, world::Split split);
};

/// Checkpoints at 0 and every cfg.checkpoint_every queries (plus the last query).
RewardRun learn_reward_language(const QueryPool& queries, const LanguageSource& source, const latent::EncoderPair& enc,
                                const CatalogEmbeddings& catalog, int n_queries, const RewardConfig& cfg,
                                const world::GroundTruthReward& w, const EvalSet& eval, std::uint64_t seed);

RewardRun learn_reward_comparison(const QueryPool& queries, const ChoiceSource& source, int n_queries,
                                  const RewardConfig& cfg, const world::GroundTruthReward& w, const EvalSet& eval,
                                  std::uint64_t seed);

}  // namespace langpref::reward
