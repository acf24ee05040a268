#include "langpref/latent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace langpref::latent {

using diff::Index;
using diff::Tape;
using diff::Var;

void LatentConfig::validate() const {
  if (latent_dim < 2) throw std::invalid_argument("latent dimension must be at least 2");
  for (int h : hidden) {
    if (h < 1) throw std::invalid_argument("hidden widths must be positive");
  }
  if (norm_weight_trajectory < 0.0 || norm_weight_language < 0.0) {
    throw std::invalid_argument("norm weights must be nonnegative");
  }
  if (frozen_epochs < 0 || cofinetune_epochs < 0) throw std::invalid_argument("epoch counts must be nonnegative");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
}

Tensor step_inputs(const world::Trajectory& traj, double dt) {
  const Index n = static_cast<Index>(traj.states.size());
  if (n == 0 || traj.actions.size() != traj.states.size()) {
    throw std::invalid_argument("trajectory needs matching nonempty states and actions");
  }
  Tensor x(n, kStepInputs);
  for (Index t = 0; t < n; ++t) {
    const auto& s = traj.states[static_cast<std::size_t>(t)];
    const auto& a = traj.actions[static_cast<std::size_t>(t)];
    x.row(t) << s.x, s.y, s.gripper_open, a.dx / dt, a.dy / dt, a.toggle;
  }
  return x;
}

namespace {

constexpr const char* kEmbedding = "lang.embedding";

// Encodes several step-input blocks in one forward pass; row i is the mean of block i.
Tensor encode_blocks(const EncoderPair& enc, const std::vector<const Tensor*>& blocks) {
  Index total = 0;
  for (const Tensor* b : blocks) total += b->rows();
  Tensor x(total, kStepInputs);
  Index r = 0;
  for (const Tensor* b : blocks) {
    x.middleRows(r, b->rows()) = *b;
    r += b->rows();
  }
  const Tensor h = diff::mlp_forward(enc.trajectory, x, enc.trajectory_spec());
  Tensor out(static_cast<Index>(blocks.size()), h.cols());
  r = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const Index n = blocks[i]->rows();
    out.row(static_cast<Index>(i)) = h.middleRows(r, n).colwise().mean();
    r += n;
  }
  return out;
}

void check_tokens(std::span<const int> tokens, int vocab) {
  if (tokens.empty()) throw std::invalid_argument("cannot encode an empty token list");
  for (int t : tokens) {
    if (t < 0 || t >= vocab) throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary");
  }
}

// Caches step inputs per trajectory id.
class InputCache {
 public:
  InputCache(const world::TrajectoryPool& pool, double dt) : pool_(pool), dt_(dt) {}

  const Tensor& get(int id) {
    auto it = cache_.find(id);
    if (it == cache_.end()) it = cache_.emplace(id, step_inputs(pool_.by_id(id).trajectory, dt_)).first;
    return it->second;
  }

 private:
  const world::TrajectoryPool& pool_;
  double dt_;
  std::unordered_map<int, Tensor> cache_;
};

struct Batch {
  Tensor inputs;
  std::vector<std::vector<Index>> step_groups;
  std::vector<Index> a_rows, b_rows;
  std::vector<std::vector<Index>> token_groups;
};

Batch make_batch(std::span<const lang::Triplet* const> triplets, InputCache& cache) {
  Batch b;
  std::vector<int> ids;
  std::unordered_map<int, Index> local;
  auto slot = [&](int id) {
    auto [it, fresh] = local.emplace(id, static_cast<Index>(ids.size()));
    if (fresh) ids.push_back(id);
    return it->second;
  };
  for (const lang::Triplet* t : triplets) {
    b.a_rows.push_back(slot(t->a_id));
    b.b_rows.push_back(slot(t->b_id));
    b.token_groups.emplace_back(t->utterance.tokens.begin(), t->utterance.tokens.end());
  }
  Index total = 0;
  for (int id : ids) total += cache.get(id).rows();
  b.inputs.resize(total, kStepInputs);
  Index r = 0;
  for (int id : ids) {
    const Tensor& x = cache.get(id);
    b.inputs.middleRows(r, x.rows()) = x;
    std::vector<Index> g(static_cast<std::size_t>(x.rows()));
    std::iota(g.begin(), g.end(), r);
    b.step_groups.push_back(std::move(g));
    r += x.rows();
  }
  return b;
}

SplitEval evaluate_cached(const EncoderPair& enc, std::span<const lang::Triplet* const> triplets, InputCache& cache,
                          double a, double b) {
  SplitEval ev;
  ev.count = triplets.size();
  if (triplets.empty()) return ev;
  std::vector<int> ids;
  std::unordered_map<int, std::size_t> local;
  for (const lang::Triplet* t : triplets) {
    for (int id : {t->a_id, t->b_id}) {
      if (local.emplace(id, ids.size()).second) ids.push_back(id);
    }
  }
  std::vector<const Tensor*> blocks;
  blocks.reserve(ids.size());
  for (int id : ids) blocks.push_back(&cache.get(id));
  const Tensor phi = encode_blocks(enc, blocks);
  std::size_t correct = 0;
  double loss = 0.0;
  for (const lang::Triplet* t : triplets) {
    const Embedding pa = phi.row(static_cast<Index>(local.at(t->a_id))).transpose();
    const Embedding pb = phi.row(static_cast<Index>(local.at(t->b_id))).transpose();
    const Embedding psi = enc.encode_language(t->utterance.tokens);
    if (psi.dot(pb - pa) > 0.0) ++correct;
    loss += align_loss(pa, pb, psi) + norm_loss(pa, pb, psi, a, b);
  }
  ev.loss = loss / static_cast<double>(triplets.size());
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(triplets.size());
  return ev;
}

}  // namespace

EncoderPair EncoderPair::initialize(const LatentConfig& cfg, int vocab_size, double dt, std::uint64_t seed) {
  cfg.validate();
  if (vocab_size < 1) throw std::invalid_argument("vocabulary must be nonempty");
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  EncoderPair enc;
  enc.latent_dim = cfg.latent_dim;
  enc.dt = dt;
  Rng rng = make_rng(seed, stream::kLatentInit);
  diff::MlpSpec traj{"traj", {kStepInputs}};
  for (int h : cfg.hidden) traj.layers.push_back(h);
  traj.layers.push_back(cfg.latent_dim);
  diff::init_mlp(enc.trajectory, traj, rng);

  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(cfg.latent_dim)));
  Tensor table(vocab_size, cfg.latent_dim);
  for (Index i = 0; i < table.size(); ++i) table.data()[i] = normal(rng);
  enc.language.add(kEmbedding, std::move(table));
  diff::init_mlp(enc.language, enc.head_spec(), rng);
  return enc;
}

diff::MlpSpec EncoderPair::trajectory_spec() const {
  diff::MlpSpec s{"traj", {kStepInputs}};
  for (std::size_t k = 0;; ++k) {
    const std::string w = s.weight_name(k);
    if (!trajectory.contains(w)) break;
    s.layers.push_back(trajectory.value(w).cols());
  }
  if (s.layers.size() < 2) throw diff::ShapeError("trajectory encoder has no layers");
  return s;
}

diff::MlpSpec EncoderPair::head_spec() const { return {"lang.head", {latent_dim, latent_dim}}; }

int EncoderPair::vocab_size() const { return static_cast<int>(language.value(kEmbedding).rows()); }

void EncoderPair::check() const {
  const diff::MlpSpec ts = trajectory_spec();
  diff::check_mlp(trajectory, ts, kStepInputs);
  if (ts.layers.back() != latent_dim) throw diff::ShapeError("trajectory encoder output width differs from d_z");
  if (language.value(kEmbedding).cols() != latent_dim) throw diff::ShapeError("token embedding width differs from d_z");
  diff::check_mlp(language, head_spec(), latent_dim);
}

Embedding EncoderPair::encode_trajectory(const world::Trajectory& traj) const {
  const Tensor x = step_inputs(traj, dt);
  return encode_blocks(*this, {&x}).row(0).transpose();
}

Tensor EncoderPair::encode_trajectories(std::span<const world::Trajectory* const> trajs) const {
  std::vector<Tensor> inputs;
  inputs.reserve(trajs.size());
  for (const world::Trajectory* t : trajs) inputs.push_back(step_inputs(*t, dt));
  std::vector<const Tensor*> blocks;
  for (const Tensor& x : inputs) blocks.push_back(&x);
  if (blocks.empty()) return Tensor(0, latent_dim);
  return encode_blocks(*this, blocks);
}

Embedding EncoderPair::encode_language(std::span<const int> tokens) const {
  const Tensor& table = language.value(kEmbedding);
  check_tokens(tokens, static_cast<int>(table.rows()));
  Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(table.cols());
  for (int t : tokens) pooled += table.row(t);
  pooled /= static_cast<double>(tokens.size());
  return diff::mlp_forward(language, Tensor(pooled), head_spec()).row(0).transpose();
}

double align_loss(const Embedding& phi_a, const Embedding& phi_b, const Embedding& psi) {
  if (phi_a.size() != phi_b.size() || phi_a.size() != psi.size()) throw diff::ShapeError("align_loss: d_z mismatch");
  return -diff::log_sigmoid(psi.dot(phi_b - phi_a));
}

double norm_loss(const Embedding& phi_a, const Embedding& phi_b, const Embedding& psi, double a, double b) {
  if (phi_a.size() != phi_b.size() || phi_a.size() != psi.size()) throw diff::ShapeError("norm_loss: d_z mismatch");
  if (a < 0.0 || b < 0.0) throw std::invalid_argument("norm weights must be nonnegative");
  const double over = std::max(phi_a.norm() - 1.0, 0.0) + std::max(phi_b.norm() - 1.0, 0.0);
  const double dev = psi.norm() - 1.0;
  return a * over + b * dev * dev;
}

Var align_loss(Var phi_a, Var phi_b, Var psi) {
  return diff::mean(-1.0 * diff::log_sigmoid(diff::row_dot(psi, phi_b - phi_a)));
}

Var norm_loss(Var phi_a, Var phi_b, Var psi, double a, double b) {
  const Var hinge = diff::relu(diff::add_scalar(diff::row_norm(phi_a), -1.0)) +
                    diff::relu(diff::add_scalar(diff::row_norm(phi_b), -1.0));
  const Var dev = diff::square(diff::add_scalar(diff::row_norm(psi), -1.0));
  return diff::mean(a * hinge + b * dev);
}

Var latent_loss(Var phi_a, Var phi_b, Var psi, double a, double b) {
  return align_loss(phi_a, phi_b, psi) + norm_loss(phi_a, phi_b, psi, a, b);
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Init: return "init";
    case Phase::Frozen: return "frozen";
    case Phase::Cofinetune: return "cofinetune";
  }
  return "?";
}

TrainResult train_latent(const lang::TripletDataset& dataset, const world::TrajectoryPool& pool, int vocab_size,
                         const LatentConfig& cfg, const EncoderPair* start) {
  cfg.validate();
  const auto train = dataset.in_split(world::Split::Train);
  const auto val = dataset.in_split(world::Split::Val);
  if (train.empty()) throw std::invalid_argument("training split has no triplets");

  EncoderPair enc = start ? *start : EncoderPair::initialize(cfg, vocab_size, pool.config.dt, cfg.seed);
  enc.check();
  const double wa = cfg.norm_weight_trajectory, wb = cfg.norm_weight_language;
  InputCache cache(pool, enc.dt);
  const diff::OptimizerConfig opt{cfg.learning_rate};
  const diff::MlpSpec tspec = enc.trajectory_spec();
  const diff::MlpSpec hspec = enc.head_spec();

  TrainResult res;
  auto record = [&](int epoch, Phase phase, double train_loss) {
    const SplitEval v = evaluate_cached(enc, val, cache, wa, wb);
    res.history.push_back({epoch, phase, train_loss, v.loss, v.accuracy});
    if (epoch == 0 || val.empty() || v.accuracy > res.history[static_cast<std::size_t>(res.best_epoch)].val_accuracy) {
      res.best_epoch = epoch;
      res.encoders = enc;
    }
  };
  record(0, Phase::Init, evaluate_cached(enc, train, cache, wa, wb).loss);

  Rng rng = make_rng(cfg.seed, stream::kLatentShuffle);
  std::vector<const lang::Triplet*> order(train.begin(), train.end());
  const int total_epochs = cfg.frozen_epochs + cfg.cofinetune_epochs;
  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    const Phase phase = epoch <= cfg.frozen_epochs ? Phase::Frozen : Phase::Cofinetune;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      const Batch batch = make_batch(std::span(order).subspan(lo, hi - lo), cache);

      Tape tape;
      const Var steps = diff::mlp_forward(tape, enc.trajectory, tape.constant(batch.inputs), tspec);
      const Var phi = diff::mean_rows(steps, batch.step_groups);
      const Var phi_a = diff::gather_rows(phi, batch.a_rows);
      const Var phi_b = diff::gather_rows(phi, batch.b_rows);
      const Var table = phase == Phase::Frozen ? tape.constant(enc.language.value(kEmbedding))
                                               : tape.param(enc.language, kEmbedding);
      const Var pooled = diff::mean_rows(table, batch.token_groups);
      Var psi;
      if (phase == Phase::Frozen) {
        psi = tape.constant(diff::mlp_forward(enc.language, pooled.value(), hspec));
      } else {
        psi = diff::mlp_forward(tape, enc.language, pooled, hspec);
      }
      const Var loss = latent_loss(phi_a, phi_b, psi, wa, wb);
      const double lv = loss.scalar();
      if (!std::isfinite(lv)) {
        throw TrainingDiverged(epoch, "latent training diverged at epoch " + std::to_string(epoch));
      }
      loss_sum += lv * static_cast<double>(hi - lo);

      diff::GradientSet grads = tape.gradients(loss);
      diff::GradientSet traj_grads, lang_grads;
      for (auto& [name, g] : grads) {
        (enc.trajectory.contains(name) ? traj_grads : lang_grads).emplace(name, std::move(g));
      }
      diff::optimizer_step(enc.trajectory, traj_grads, opt);
      if (phase == Phase::Cofinetune) diff::optimizer_step(enc.language, lang_grads, opt);
    }
    record(epoch, phase, loss_sum / static_cast<double>(order.size()));
  }
  if (val.empty()) {
    res.encoders = enc;
    res.best_epoch = total_epochs;
  }
  return res;
}

double alignment_accuracy(const Tensor& phi_a, const Tensor& phi_b, const Tensor& psi) {
  if (phi_a.rows() != phi_b.rows() || phi_a.rows() != psi.rows() || phi_a.cols() != phi_b.cols() ||
      phi_a.cols() != psi.cols()) {
    throw diff::ShapeError("alignment_accuracy: shape mismatch");
  }
  if (psi.rows() == 0) throw std::invalid_argument("accuracy needs at least one row");
  const Eigen::ArrayXd dots = (psi.array() * (phi_b - phi_a).array()).rowwise().sum();
  return static_cast<double>((dots > 0.0).count()) / static_cast<double>(psi.rows());
}

SplitEval evaluate(const EncoderPair& enc, std::span<const lang::Triplet* const> triplets,
                   const world::TrajectoryPool& pool, double a, double b) {
  InputCache cache(pool, enc.dt);
  return evaluate_cached(enc, triplets, cache, a, b);
}

double accuracy(const EncoderPair& enc, std::span<const lang::Triplet* const> triplets,
                const world::TrajectoryPool& pool) {
  if (triplets.empty()) throw std::invalid_argument("accuracy needs at least one triplet");
  return evaluate(enc, triplets, pool).accuracy;
}

double accuracy(const EncoderPair& enc, const lang::TripletDataset& dataset, world::Split split,
                const world::TrajectoryPool& pool) {
  return accuracy(enc, dataset.in_split(split), pool);
}

Tensor embed_pool(const EncoderPair& enc, const world::TrajectoryPool& pool) {
  std::vector<const world::Trajectory*> trajs;
  trajs.reserve(pool.items.size());
  for (const world::PoolItem& it : pool.items) trajs.push_back(&it.trajectory);
  return enc.encode_trajectories(trajs);
}

}  // namespace langpref::latent
