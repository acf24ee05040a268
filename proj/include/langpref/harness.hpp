#pragma once

// Experiment orchestration: one config document drives data generation, latent
// training, the improvement study and the reward-learning study. Every table a
// pipeline writes is a pure function of the config and master seed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "langpref/improver.hpp"
#include "langpref/rewardlab.hpp"
#include "langpref/serialization.hpp"

namespace langpref::harness {

enum class StartRule { BottomQuartile, Uniform };
const char* start_rule_name(StartRule r);
StartRule start_rule_from_name(const std::string& name);

struct ImproveSettings {
  int iterations = 15;
  int seeds = 100;
  improve::ImproverConfig improver;
  StartRule start = StartRule::BottomQuartile;
};

struct HumanSettings {
  std::vector<world::FeatureVector> weights;  // explicit humans; when empty, `count` are drawn
  int count = 3;
  double norm = 10.0;
  double beta = 1.0;
};

struct RewardSettings {
  int queries = 20;
  int seeds = 3;
  reward::RewardConfig model;
};

struct GatewaySettings {
  std::optional<world::FeatureVector> reference_w;
  int improve_max_iterations = 10;
  int learn_max_iterations = 20;
  int rate_every = 5;
  int port = 8080;
};

struct ExperimentConfig {
  world::WorldConfig world;
  int pool_size = 320;
  world::SplitRatios splits;
  lang::PairsPerSplit pairs;
  latent::LatentConfig latent;  // the seed comes from master_seed
  ImproveSettings improve;
  HumanSettings humans;
  RewardSettings reward;
  GatewaySettings gateway;
  std::string output_dir = "out";
  std::uint64_t master_seed = 0;

  void validate() const;
};

/// Every field is written; reading fills absent fields with defaults and rejects unknown ones.
io::Json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const io::Json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a 64 over the canonical config document, as 16 hex digits.
std::string config_digest(const ExperimentConfig& cfg);

// File names inside the output directory.
inline constexpr const char* kPoolFile = "pool.json";
inline constexpr const char* kCatalogFile = "catalog.json";
inline constexpr const char* kTripletsFile = "triplets.json";
inline constexpr const char* kCheckpointFile = "checkpoint.json";
inline constexpr const char* kHistoryFile = "latent_history.csv";
inline constexpr const char* kImproveFile = "improve.csv";
inline constexpr const char* kTracesFile = "improve_traces.csv";
inline constexpr const char* kRewardFile = "reward_curves.csv";
inline constexpr const char* kConfigFile = "config.json";

struct DataBundle {
  world::TrajectoryPool pool;
  lang::Catalog catalog;
  lang::TripletDataset triplets;
};

DataBundle generate_data(const ExperimentConfig& cfg);
void write_data(const std::filesystem::path& dir, const DataBundle& data);
DataBundle load_data(const std::filesystem::path& dir);

struct DataSummary {
  std::size_t trajectories[3] = {0, 0, 0};
  std::size_t triplets[3] = {0, 0, 0};
  std::size_t fallbacks = 0;
  std::size_t unsound_labels = 0;  // recomputed from raw states; must be zero
};

/// Recomputes features from raw states and re-checks every label against its dead-band.
DataSummary summarize(const DataBundle& data);
std::string format_summary(const DataSummary& s);

struct LatentCheckpoint {
  latent::EncoderPair encoders;
  std::vector<std::string> vocabulary;
  int best_epoch = 0;
  bool frozen_language = false;
};

io::Json checkpoint_to_json(const LatentCheckpoint& ckpt);
LatentCheckpoint checkpoint_from_json(const io::Json& doc);
/// Rejects a checkpoint whose vocabulary differs from the catalog's.
LatentCheckpoint load_checkpoint(const std::filesystem::path& path, const lang::Catalog& catalog);

struct LatentRun {
  LatentCheckpoint checkpoint;
  latent::TrainResult result;
  double test_accuracy = 0.0;
  io::MetricsTable table;
};

/// The frozen-language ablation moves every epoch into the first phase.
LatentRun run_train_latent(const ExperimentConfig& cfg, const DataBundle& data, bool frozen_language,
                           const LatentCheckpoint* resume = nullptr);

/// Normalized true reward of every pool item under w: (r - min) / (max - min).
std::vector<double> normalized_rewards(const world::TrajectoryPool& pool, const world::GroundTruthReward& w);

/// Uniform over the bottom quartile of the pool by w (at least one item).
int draw_suboptimal_start(const world::TrajectoryPool& pool, const world::GroundTruthReward& w, Rng& rng);

/// Simulated human `index` of the study: explicit weights when configured, else a draw.
world::GroundTruthReward human_weights(const ExperimentConfig& cfg, int index);

struct ImproveRun {
  io::MetricsTable table;       // per-seed curves plus mean/std summary rows
  std::string traces_csv;       // seed,iteration,shown_id,utterance,chosen_id,objective,true_reward
  std::vector<double> mean;     // per iteration, normalized
  std::vector<double> stddev;
  int incomplete = 0;
};

ImproveRun run_improve(const ExperimentConfig& cfg, const DataBundle& data, const latent::EncoderPair& enc);

enum class RewardMethod { Language, Comparison, AblationExplicit, AblationImplicit };
const char* method_name(RewardMethod m);
RewardMethod method_from_name(const std::string& name);
/// Comma-separated names; "all" selects every method.
std::vector<RewardMethod> methods_from_list(const std::string& list);

struct RewardCell {
  RewardMethod method = RewardMethod::Language;
  int human = 0;
  int seed = 0;
  reward::RewardRun run;
};

struct RewardStudy {
  std::vector<RewardCell> cells;  // human-major, then seed, then method
  io::MetricsTable table;         // curve points plus per-curve AUC rows
};

RewardStudy run_learn_reward(const ExperimentConfig& cfg, const DataBundle& data, const latent::EncoderPair& enc,
                             const std::vector<RewardMethod>& methods);

}  // namespace langpref::harness
