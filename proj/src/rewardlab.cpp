#include "langpref/rewardlab.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace langpref::reward {

using diff::Index;
using diff::Tape;
using diff::Var;

double bt_prob(double rx, double ry) { return diff::sigmoid(rx - ry); }

const char* loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::Full: return "full";
    case LossMode::ExplicitOnly: return "explicit";
    case LossMode::ImplicitOnly: return "implicit";
  }
  return "?";
}

LossMode loss_mode_from_name(const std::string& name) {
  if (name == "full") return LossMode::Full;
  if (name == "explicit") return LossMode::ExplicitOnly;
  if (name == "implicit") return LossMode::ImplicitOnly;
  throw std::invalid_argument("unknown loss mode '" + name + "'");
}

void RewardConfig::validate() const {
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("reward hidden widths must be positive");
  }
  if (!(learning_rate > 0.0)) throw std::invalid_argument("reward learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be nonnegative");
  if (epochs_per_query < 0) throw std::invalid_argument("epochs per query must be nonnegative");
  if (negatives < 1) throw std::invalid_argument("need at least one negative utterance");
  if (checkpoint_every < 1) throw std::invalid_argument("checkpoint spacing must be positive");
  if (eval_pairs < 1) throw std::invalid_argument("need at least one evaluation pair");
}

// ---------------------------------------------------------------------------
// Model

RewardModel RewardModel::initialize(int latent_dim, const std::vector<int>& hidden, std::uint64_t seed) {
  if (latent_dim < 1) throw std::invalid_argument("reward input width must be positive");
  RewardModel m;
  m.spec_.layers = {latent_dim};
  for (int h : hidden) m.spec_.layers.push_back(h);
  m.spec_.layers.push_back(1);
  Rng rng = make_rng(seed, stream::kRewardInit);
  diff::init_mlp(m.params_, m.spec_, rng);
  return m;
}

RewardModel RewardModel::from_params(diff::ParamSet params) {
  RewardModel m;
  m.params_ = std::move(params);
  for (std::size_t k = 0;; ++k) {
    const std::string w = m.spec_.weight_name(k);
    if (!m.params_.contains(w)) break;
    if (k == 0) m.spec_.layers.push_back(m.params_.value(w).rows());
    m.spec_.layers.push_back(m.params_.value(w).cols());
  }
  if (m.spec_.layers.size() < 2 || m.spec_.layers.back() != 1) throw diff::ShapeError("reward network must end in one output");
  diff::check_mlp(m.params_, m.spec_, m.spec_.layers.front());
  return m;
}

Eigen::VectorXd RewardModel::score(const Tensor& embeddings) const {
  return diff::mlp_forward(params_, embeddings, spec_).col(0);
}

double RewardModel::score(const Embedding& phi) const { return score(Tensor(phi.transpose()))(0); }

Var RewardModel::score(Tape& tape, Var embeddings) const { return diff::mlp_forward(tape, params_, embeddings, spec_); }

// ---------------------------------------------------------------------------
// Queries

CatalogEmbeddings CatalogEmbeddings::build(const latent::EncoderPair& enc, const lang::Catalog& catalog) {
  CatalogEmbeddings c;
  c.catalog = &catalog;
  c.psi.resize(catalog.size(), enc.latent_dim);
  for (int i = 0; i < catalog.size(); ++i) c.psi.row(i) = enc.encode_language(catalog.at(i).tokens).transpose();
  return c;
}

LanguageQuery make_language_query(int shown_id, const Embedding& phi, const lang::Utterance& utterance,
                                  const Embedding& psi, const CatalogEmbeddings& cat, int k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("need at least one negative utterance");
  const int cls = lang::utterance_class(utterance.feature, utterance.direction);
  std::vector<int> eligible;
  for (const lang::Utterance& u : cat.catalog->utterances()) {
    if (lang::utterance_class(u.feature, u.direction) != cls) eligible.push_back(u.catalog_index);
  }
  if (static_cast<int>(eligible.size()) < k) {
    throw std::invalid_argument("catalog has only " + std::to_string(eligible.size()) + " negatives, need " +
                                std::to_string(k));
  }
  // Partial Fisher-Yates: the first k entries are a uniform draw without replacement.
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), eligible.size() - 1);
    std::swap(eligible[static_cast<std::size_t>(i)], eligible[pick(rng)]);
  }
  LanguageQuery q;
  q.shown_id = shown_id;
  q.utterance = utterance;
  q.shown = phi;
  q.improved = phi + psi;
  for (int i = 0; i < k; ++i) {
    const int idx = eligible[static_cast<std::size_t>(i)];
    q.negative_catalog_indices.push_back(idx);
    q.negatives.push_back(phi + cat.psi.row(idx).transpose());
  }
  return q;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

Tensor stack(const std::vector<const Embedding*>& rows) {
  Tensor m(static_cast<Index>(rows.size()), rows.empty() ? 0 : rows.front()->size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Index>(i)) = rows[i]->transpose();
  return m;
}

// -mean log sigmoid(r(win) - r(lose)) over paired rows.
Var preference_nll(Tape& tape, const RewardModel& model, const Tensor& win, const Tensor& lose) {
  const Var rw = model.score(tape, tape.constant(win));
  const Var rl = model.score(tape, tape.constant(lose));
  return diff::scale(diff::mean(diff::log_sigmoid(rw - rl)), -1.0);
}

void require_queries(const std::vector<LanguageQuery>& queries) {
  if (queries.empty()) throw std::invalid_argument("loss needs at least one query");
}

}  // namespace

Var explicit_loss(Tape& tape, const RewardModel& model, const std::vector<LanguageQuery>& queries) {
  require_queries(queries);
  std::vector<const Embedding*> win, lose;
  for (const LanguageQuery& q : queries) {
    win.push_back(&q.improved);
    lose.push_back(&q.shown);
  }
  return preference_nll(tape, model, stack(win), stack(lose));
}

Var implicit_loss(Tape& tape, const RewardModel& model, const std::vector<LanguageQuery>& queries, int k) {
  require_queries(queries);
  if (k < 1) throw std::invalid_argument("need at least one negative utterance");
  std::vector<const Embedding*> win, lose;
  for (const LanguageQuery& q : queries) {
    if (static_cast<int>(q.negatives.size()) < k) {
      throw std::invalid_argument("query carries " + std::to_string(q.negatives.size()) + " negatives, need " +
                                  std::to_string(k));
    }
    for (int j = 0; j < k; ++j) {
      win.push_back(&q.improved);
      lose.push_back(&q.negatives[static_cast<std::size_t>(j)]);
    }
  }
  // Equal k per query, so the flat mean is the mean over queries of per-query means.
  return preference_nll(tape, model, stack(win), stack(lose));
}

Var language_loss(Tape& tape, const RewardModel& model, const std::vector<LanguageQuery>& queries, int k,
                  LossMode mode) {
  switch (mode) {
    case LossMode::ExplicitOnly: return explicit_loss(tape, model, queries);
    case LossMode::ImplicitOnly: return implicit_loss(tape, model, queries, k);
    case LossMode::Full: return explicit_loss(tape, model, queries) + implicit_loss(tape, model, queries, k);
  }
  throw std::logic_error("unhandled loss mode");
}

Var comparison_loss(Tape& tape, const RewardModel& model, const std::vector<ComparisonQuery>& queries) {
  if (queries.empty()) throw std::invalid_argument("loss needs at least one query");
  std::vector<const Embedding*> win, lose;
  for (const ComparisonQuery& q : queries) {
    win.push_back(q.chose_a ? &q.a : &q.b);
    lose.push_back(q.chose_a ? &q.b : &q.a);
  }
  return preference_nll(tape, model, stack(win), stack(lose));
}

double explicit_loss(const RewardModel& model, const std::vector<LanguageQuery>& queries) {
  Tape t;
  return explicit_loss(t, model, queries).scalar();
}

double implicit_loss(const RewardModel& model, const std::vector<LanguageQuery>& queries, int k) {
  Tape t;
  return implicit_loss(t, model, queries, k).scalar();
}

double language_loss(const RewardModel& model, const std::vector<LanguageQuery>& queries, int k, LossMode mode) {
  Tape t;
  return language_loss(t, model, queries, k, mode).scalar();
}

// ---------------------------------------------------------------------------
// Learner

RewardLearner::RewardLearner(int latent_dim, const RewardConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed), model_(RewardModel::initialize(latent_dim, cfg.hidden, seed)) {
  cfg_.validate();
}

void RewardLearner::add(LanguageQuery q) {
  if (q.shown.size() != model_.latent_dim()) throw diff::ShapeError("query embedding width differs from the model");
  language_.push_back(std::move(q));
}

void RewardLearner::add(ComparisonQuery q) {
  if (q.a_id == q.b_id) throw std::invalid_argument("comparison needs two different trajectories");
  if (q.a.size() != model_.latent_dim()) throw diff::ShapeError("query embedding width differs from the model");
  comparison_.push_back(std::move(q));
}

void RewardLearner::train() {
  if (query_count() == 0) return;
  int steps = cfg_.epochs_per_query;
  if (cfg_.retrain_from_scratch) {
    model_ = RewardModel::initialize(model_.latent_dim(), cfg_.hidden, seed_);
    steps *= static_cast<int>(query_count());
  }
  const diff::OptimizerConfig opt{cfg_.learning_rate};
  for (int e = 0; e < steps; ++e) {
    Tape tape;
    Var loss;
    bool have = false;
    if (!language_.empty()) {
      loss = language_loss(tape, model_, language_, cfg_.negatives, cfg_.loss);
      have = true;
    }
    if (!comparison_.empty()) {
      const Var c = comparison_loss(tape, model_, comparison_);
      loss = have ? loss + c : c;
    }
    if (!std::isfinite(loss.scalar())) throw std::runtime_error("reward training produced a non-finite loss");
    diff::GradientSet grads = tape.gradients(loss);
    if (cfg_.weight_decay > 0.0) {
      const diff::MlpSpec& spec = model_.spec();
      for (std::size_t k = 0; k < spec.layer_count(); ++k) {
        const std::string name = spec.weight_name(k);
        grads[name] += 2.0 * cfg_.weight_decay * model_.params().value(name);
      }
    }
    diff::optimizer_step(model_.params(), grads, opt);
  }
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct SplitMembers {
  std::vector<int> ids;
  Tensor embeddings;
  std::vector<world::FeatureVector> features;
};

SplitMembers members_of(const latent::EncoderPair& enc, const world::TrajectoryPool& pool, world::Split split) {
  SplitMembers m;
  std::vector<const world::Trajectory*> trajs;
  for (const world::PoolItem* it : pool.in_split(split)) {
    m.ids.push_back(it->trajectory.id);
    m.features.push_back(it->features);
    trajs.push_back(&it->trajectory);
  }
  if (trajs.empty()) throw std::invalid_argument(std::string("split '") + world::split_name(split) + "' is empty");
  m.embeddings = enc.encode_trajectories(trajs);
  return m;
}

}  // namespace

EvalSet EvalSet::build(const latent::EncoderPair& enc, const world::TrajectoryPool& pool, world::Split split,
                       int pair_count, std::uint64_t seed) {
  if (pair_count < 1) throw std::invalid_argument("need at least one evaluation pair");
  SplitMembers m = members_of(enc, pool, split);
  EvalSet e;
  e.ids = std::move(m.ids);
  e.embeddings = std::move(m.embeddings);
  e.features = std::move(m.features);
  const std::size_t n = e.ids.size();
  if (n < 2) throw std::invalid_argument("evaluation needs at least two trajectories");
  Rng rng = make_rng(seed, stream::kEvalPairs);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  const bool distinct = static_cast<std::size_t>(pair_count) <= n * (n - 1) / 2;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  while (e.pairs.size() < static_cast<std::size_t>(pair_count)) {
    const std::size_t i = pick(rng), j = pick(rng);
    if (i == j) continue;
    if (distinct && !seen.emplace(std::min(i, j), std::max(i, j)).second) continue;
    e.pairs.emplace_back(i, j);
  }
  return e;
}

double eval_cross_entropy(const RewardModel& model, const world::GroundTruthReward& w, const EvalSet& eval) {
  if (eval.pairs.empty()) throw std::invalid_argument("no evaluation pairs");
  const Eigen::VectorXd r = model.score(eval.embeddings);
  double total = 0.0;
  for (const auto& [i, j] : eval.pairs) {
    const double pw = bt_prob(world::true_reward(w, eval.features[i]), world::true_reward(w, eval.features[j]));
    const double d = r(static_cast<Index>(i)) - r(static_cast<Index>(j));
    total -= pw * diff::log_sigmoid(d) + (1.0 - pw) * diff::log_sigmoid(-d);
  }
  return total / static_cast<double>(eval.pairs.size());
}

BestOfPool best_of_pool(const RewardModel& model, const world::GroundTruthReward& w, const EvalSet& eval) {
  if (eval.ids.empty()) throw std::invalid_argument("evaluation set is empty");
  const Eigen::VectorXd r = model.score(eval.embeddings);
  std::size_t best = 0;
  double lo = world::true_reward(w, eval.features[0]), hi = lo;
  for (std::size_t i = 1; i < eval.ids.size(); ++i) {
    const Index ii = static_cast<Index>(i), bi = static_cast<Index>(best);
    if (r(ii) > r(bi) || (r(ii) == r(bi) && eval.ids[i] < eval.ids[best])) best = i;
    const double t = world::true_reward(w, eval.features[i]);
    lo = std::min(lo, t);
    hi = std::max(hi, t);
  }
  BestOfPool b;
  b.id = eval.ids[best];
  if (hi == lo) {
    b.degenerate = true;
    b.normalized = 1.0;
  } else {
    b.normalized = (world::true_reward(w, eval.features[best]) - lo) / (hi - lo);
  }
  return b;
}

double auc(const LearningCurve& curve) {
  const auto& p = curve.points;
  if (p.size() < 2) throw std::invalid_argument("auc needs at least two points");
  double area = 0.0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i].queries <= p[i - 1].queries) throw std::invalid_argument("curve query counts must increase");
    area += 0.5 * (p[i].value + p[i - 1].value) * (p[i].queries - p[i - 1].queries);
  }
  return area / (p.back().queries - p.front().queries);
}

// ---------------------------------------------------------------------------
// Experiments

QueryPool QueryPool::build(const latent::EncoderPair& enc, const world::TrajectoryPool& pool, world::Split split) {
  SplitMembers m = members_of(enc, pool, split);
  return QueryPool{std::move(m.ids), std::move(m.embeddings), std::move(m.features)};
}

namespace {

void checkpoint(RewardRun& run, const RewardModel& model, int queries, const world::GroundTruthReward& w,
                const EvalSet& eval) {
  run.cross_entropy.points.push_back({queries, eval_cross_entropy(model, w, eval)});
  run.true_reward.points.push_back({queries, best_of_pool(model, w, eval).normalized});
}

bool scheduled(int q, int n, int every) { return q % every == 0 || q == n; }

}  // namespace

RewardRun learn_reward_language(const QueryPool& queries, const LanguageSource& source, const latent::EncoderPair& enc,
                                const CatalogEmbeddings& catalog, int n_queries, const RewardConfig& cfg,
                                const world::GroundTruthReward& w, const EvalSet& eval, std::uint64_t seed) {
  cfg.validate();
  if (queries.ids.empty()) throw std::invalid_argument("query pool is empty");
  if (n_queries < 0) throw std::invalid_argument("query count must be nonnegative");
  RewardLearner learner(enc.latent_dim, cfg, seed);
  Rng rng = make_rng(seed, stream::kReward);
  std::uniform_int_distribution<std::size_t> pick(0, queries.ids.size() - 1);
  RewardRun run;
  checkpoint(run, learner.model(), 0, w, eval);
  for (int q = 1; q <= n_queries; ++q) {
    const std::size_t row = pick(rng);
    std::optional<lang::Utterance> utt;
    try {
      utt = source(queries.ids[row], queries.features[row]);
    } catch (const std::exception& ex) {
      run.complete = false;
      run.failure = ex.what();
      break;
    }
    if (utt) {
      const Embedding phi = queries.embeddings.row(static_cast<Index>(row)).transpose();
      const Embedding psi = utt->catalog_index >= 0 && catalog.catalog && utt->catalog_index < catalog.psi.rows()
                                ? Embedding(catalog.psi.row(utt->catalog_index).transpose())
                                : enc.encode_language(utt->tokens);
      learner.add(make_language_query(queries.ids[row], phi, *utt, psi, catalog, cfg.negatives, rng));
      learner.train();
    }
    run.queries = q;
    if (scheduled(q, n_queries, cfg.checkpoint_every)) checkpoint(run, learner.model(), q, w, eval);
  }
  run.model = learner.model();
  return run;
}

RewardRun learn_reward_comparison(const QueryPool& queries, const ChoiceSource& source, int n_queries,
                                  const RewardConfig& cfg, const world::GroundTruthReward& w, const EvalSet& eval,
                                  std::uint64_t seed) {
  cfg.validate();
  if (queries.ids.size() < 2) throw std::invalid_argument("comparison needs at least two trajectories");
  if (n_queries < 0) throw std::invalid_argument("query count must be nonnegative");
  RewardLearner learner(static_cast<int>(queries.embeddings.cols()), cfg, seed);
  Rng rng = make_rng(seed, stream::kReward);
  std::uniform_int_distribution<std::size_t> pick(0, queries.ids.size() - 1);
  RewardRun run;
  checkpoint(run, learner.model(), 0, w, eval);
  for (int q = 1; q <= n_queries; ++q) {
    std::size_t i = pick(rng), j = pick(rng);
    while (j == i) j = pick(rng);
    ComparisonQuery c;
    c.a_id = queries.ids[i];
    c.b_id = queries.ids[j];
    try {
      c.chose_a = source(c.a_id, c.b_id, queries.features[i], queries.features[j]);
    } catch (const std::exception& ex) {
      run.complete = false;
      run.failure = ex.what();
      break;
    }
    c.a = queries.embeddings.row(static_cast<Index>(i)).transpose();
    c.b = queries.embeddings.row(static_cast<Index>(j)).transpose();
    learner.add(std::move(c));
    learner.train();
    run.queries = q;
    if (scheduled(q, n_queries, cfg.checkpoint_every)) checkpoint(run, learner.model(), q, w, eval);
  }
  run.model = learner.model();
  return run;
}

}  // namespace langpref::reward
