#pragma once

// Shared latent space between trajectories and comparative utterances.
// A trajectory embeds as the mean of a per-step MLP; an utterance embeds as a
// linear head over its mean token embedding. Training aligns psi with phi_B - phi_A.

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "langpref/diffcore.hpp"
#include "langpref/langcat.hpp"
#include "langpref/worldsim.hpp"

namespace langpref::latent {

using diff::Tensor;
using Embedding = Eigen::VectorXd;

/// Per-step encoder input width: (x, y, gripper, vx, vy, toggle).
inline constexpr int kStepInputs = 6;

struct LatentConfig {
  int latent_dim = 16;
  std::vector<int> hidden{32, 32};
  double norm_weight_trajectory = 1.0;
  double norm_weight_language = 1.0;
  int frozen_epochs = 50;
  int cofinetune_epochs = 150;
  double learning_rate = 2e-3;
  int batch_size = 32;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Step inputs for a trajectory, one row per step. Velocities are actions divided by dt.
Tensor step_inputs(const world::Trajectory& traj, double dt);

struct EncoderPair {
  diff::ParamSet trajectory;  // "traj.<k>.weight|bias"
  diff::ParamSet language;    // "lang.embedding" (vocab x d_z) and "lang.head.0.weight|bias"
  int latent_dim = 0;
  double dt = 0.1;

  static EncoderPair initialize(const LatentConfig& cfg, int vocab_size, double dt, std::uint64_t seed);

  diff::MlpSpec trajectory_spec() const;
  diff::MlpSpec head_spec() const;
  int vocab_size() const;

  Embedding encode_trajectory(const world::Trajectory& traj) const;
  /// One embedding per row, in the order given.
  Tensor encode_trajectories(std::span<const world::Trajectory* const> trajs) const;
  /// Rejects empty token lists and out-of-vocabulary ids.
  Embedding encode_language(std::span<const int> tokens) const;

  /// Throws diff::ShapeError when the two parameter sets disagree on d_z.
  void check() const;
};

/// -log sigmoid(psi . (phi_b - phi_a)).
double align_loss(const Embedding& phi_a, const Embedding& phi_b, const Embedding& psi);
/// a (hinge(|phi_a| - 1) + hinge(|phi_b| - 1)) + b (|psi| - 1)^2.
double norm_loss(const Embedding& phi_a, const Embedding& phi_b, const Embedding& psi, double a, double b);

/// Row-wise taped versions; return the mean over rows of align + norm.
diff::Var align_loss(diff::Var phi_a, diff::Var phi_b, diff::Var psi);
diff::Var norm_loss(diff::Var phi_a, diff::Var phi_b, diff::Var psi, double a, double b);
diff::Var latent_loss(diff::Var phi_a, diff::Var phi_b, diff::Var psi, double a, double b);

enum class Phase { Init = 0, Frozen = 1, Cofinetune = 2 };
const char* phase_name(Phase p);

struct EpochRecord {
  int epoch = 0;
  Phase phase = Phase::Init;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  EncoderPair encoders;  // best-validation-accuracy checkpoint
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Two-phase schedule: trajectory encoder alone, then both encoders. Without a
/// validation split the final state is returned. `start` resumes from existing
/// encoders (optimizer state included).
TrainResult train_latent(const lang::TripletDataset& dataset, const world::TrajectoryPool& pool, int vocab_size,
                         const LatentConfig& cfg, const EncoderPair* start = nullptr);

struct SplitEval {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

/// Fraction of rows with psi . (phi_b - phi_a) > 0. Ties count as wrong.
double alignment_accuracy(const Tensor& phi_a, const Tensor& phi_b, const Tensor& psi);

/// Mean loss and fraction of triplets with psi . (phi_b - phi_a) > 0.
SplitEval evaluate(const EncoderPair& enc, std::span<const lang::Triplet* const> triplets,
                   const world::TrajectoryPool& pool, double a = 1.0, double b = 1.0);
double accuracy(const EncoderPair& enc, std::span<const lang::Triplet* const> triplets,
                const world::TrajectoryPool& pool);
double accuracy(const EncoderPair& enc, const lang::TripletDataset& dataset, world::Split split,
                const world::TrajectoryPool& pool);

/// Embeddings for every pool item, rows in pool order.
Tensor embed_pool(const EncoderPair& enc, const world::TrajectoryPool& pool);

}  // namespace langpref::latent
