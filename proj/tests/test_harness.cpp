#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "langpref/harness.hpp"

using namespace langpref;
using namespace langpref::harness;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(std::uint64_t seed = 3) {
  ExperimentConfig c;
  c.pool_size = 48;
  c.pairs = {60, 10, 10};
  c.latent.latent_dim = 4;
  c.latent.hidden = {8};
  c.latent.frozen_epochs = 2;
  c.latent.cofinetune_epochs = 3;
  c.improve.iterations = 4;
  c.improve.seeds = 3;
  c.humans.count = 2;
  c.reward.queries = 6;
  c.reward.seeds = 2;
  c.reward.model.hidden = {6};
  c.reward.model.epochs_per_query = 3;
  c.reward.model.checkpoint_every = 3;
  c.reward.model.eval_pairs = 15;
  c.master_seed = seed;
  c.latent.seed = seed;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("langpref_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("pool documents round-trip byte-identically and are validated on load") {
  world::TrajectoryPool pool = world::generate_pool(world::WorldConfig{}, 16, 5);
  world::split(pool, world::SplitRatios{}, 5);
  const std::string text = io::dump(io::pool_to_json(pool));
  const world::TrajectoryPool back = io::pool_from_json(io::Json::parse(text));
  REQUIRE(back.items.size() == 16);
  CHECK(io::dump(io::pool_to_json(back)) == text);
  for (std::size_t i = 0; i < 16; ++i) {
    CHECK(back.items[i].features == pool.items[i].features);
    CHECK(back.items[i].split == pool.items[i].split);
  }

  io::Json broken = io::Json::parse(text);
  broken["items"][0]["states"][3][0] = 9.0;  // teleport outside the dynamics
  CHECK_THROWS_AS(io::pool_from_json(broken), io::FormatError);
  io::Json old = io::Json::parse(text);
  old["format_version"] = 0;
  CHECK_THROWS_AS(io::pool_from_json(old), io::FormatError);
  io::Json wrong = io::Json::parse(text);
  wrong["kind"] = "triplets";
  CHECK_THROWS_AS(io::pool_from_json(wrong), io::FormatError);
}

TEST_CASE("catalog, triplets, parameters and models round-trip") {
  const lang::Catalog cat = lang::Catalog::builtin();
  const lang::Catalog cat2 = io::catalog_from_json(io::catalog_to_json(cat));
  REQUIRE(cat2.size() == cat.size());
  for (int i = 0; i < cat.size(); ++i) CHECK(cat2.at(i).tokens == cat.at(i).tokens);

  world::TrajectoryPool pool = world::generate_pool(world::WorldConfig{}, 32, 6);
  world::split(pool, world::SplitRatios{}, 6);
  const lang::TripletDataset ds = lang::build_triplets(pool, cat, lang::default_epsilon(pool), {20, 2, 2}, 6);
  const lang::TripletDataset ds2 = io::triplets_from_json(io::triplets_to_json(ds), cat);
  REQUIRE(ds2.items.size() == ds.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    CHECK(ds2.items[i].a_id == ds.items[i].a_id);
    CHECK(ds2.items[i].utterance.catalog_index == ds.items[i].utterance.catalog_index);
  }
  io::Json bad = io::triplets_to_json(ds);
  bad["items"][0]["text"] = "do a barrel roll";
  CHECK_THROWS_AS(io::triplets_from_json(bad, cat), io::FormatError);

  latent::LatentConfig lc;
  lc.latent_dim = 4;
  lc.hidden = {5};
  lc.frozen_epochs = 1;
  lc.cofinetune_epochs = 1;
  // Without a validation split the final state comes back, so moments are nonzero.
  lang::TripletDataset train_only;
  for (const lang::Triplet* t : ds.in_split(world::Split::Train)) train_only.items.push_back(*t);
  const latent::EncoderPair enc = latent::train_latent(train_only, pool, cat.vocabulary().size(), lc).encoders;
  REQUIRE(enc.trajectory.step_count() > 0);
  const latent::EncoderPair enc2 = io::encoders_from_json(io::encoders_to_json(enc));
  CHECK(enc2.trajectory == enc.trajectory);
  CHECK(enc2.language == enc.language);
  CHECK(enc2.trajectory.step_count() == enc.trajectory.step_count());
  for (const auto& [name, p] : enc.trajectory.entries()) {
    CHECK(enc2.trajectory.at(name).second_moment == p.second_moment);
  }
  CHECK(enc2.encode_trajectory(pool.items[0].trajectory) == enc.encode_trajectory(pool.items[0].trajectory));

  const reward::RewardModel m = reward::RewardModel::initialize(4, {3, 2}, 1);
  const reward::RewardModel m2 = io::reward_model_from_json(io::reward_model_to_json(m));
  CHECK(m2.params() == m.params());
  CHECK(m2.spec().layers == m.spec().layers);
}

TEST_CASE("metrics tables: fixed header, shortest doubles, strict parsing") {
  CHECK(io::format_double(0.1) == "0.1");
  CHECK(io::format_double(1.0) == "1");
  CHECK(std::stod(io::format_double(M_PI)) == M_PI);
  io::MetricsTable t;
  t.add({"improve", "printed", 4, 2.0, "mean", 0.125});
  t.add({"improve", "printed", -1, 0.5, "std", 1e-300});
  const std::string csv = t.to_csv();
  CHECK(csv.rfind("experiment,method,seed,x,metric,value\n", 0) == 0);
  const io::MetricsTable back = io::MetricsTable::parse(csv);
  CHECK(back.to_csv() == csv);
  CHECK(back.rows()[1].value == 1e-300);
  CHECK_THROWS(t.add({"a,b", "m", 0, 0, "x", 0}));
  CHECK_THROWS(t.add({"", "m", 0, 0, "x", 0}));
  CHECK_THROWS_AS(io::MetricsTable::parse("a,b\n"), io::FormatError);
  CHECK_THROWS_AS(io::MetricsTable::parse(std::string(io::MetricsTable::kHeader) + "\na,b,1,2,c\n"), io::FormatError);
  CHECK_THROWS_AS(io::MetricsTable::parse(std::string(io::MetricsTable::kHeader) + "\na,b,1.5,2,c,3\n"), io::FormatError);
}

TEST_CASE("experiment config: round-trip, defaults, unknown fields and digest") {
  const ExperimentConfig c = tiny_config();
  const ExperimentConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back).dump() == config_to_json(c).dump());
  CHECK(config_digest(back) == config_digest(c));
  CHECK(config_digest(c).size() == 16);
  CHECK(config_digest(tiny_config(4)) != config_digest(c));

  io::Json partial = io::document("experiment-config");
  partial["master_seed"] = 9;
  partial["reward"] = {{"queries", 7}};
  const ExperimentConfig p = config_from_json(partial);
  CHECK(p.master_seed == 9);
  CHECK(p.latent.seed == 9);
  CHECK(p.reward.queries == 7);
  CHECK(p.reward.seeds == 3);
  CHECK(p.pool_size == 320);
  CHECK_FALSE(p.gateway.reference_w.has_value());

  io::Json typo = partial;
  typo["reward"]["querys"] = 7;
  CHECK_THROWS_AS(config_from_json(typo), io::FormatError);
  io::Json invalid = partial;
  invalid["improve"] = {{"seeds", 0}};
  CHECK_THROWS_AS(config_from_json(invalid), io::FormatError);
  io::Json humans = partial;
  humans["humans"] = {{"weights", {{1, 0, 0, 0}, {0, 0, 2, 0}}}};
  const ExperimentConfig h = config_from_json(humans);
  CHECK(human_weights(h, 1).w == world::FeatureVector(0, 0, 2, 0));
  CHECK(human_weights(h, 2).w == world::FeatureVector(1, 0, 0, 0));
  CHECK(human_weights(p, 0).w.norm() == doctest::Approx(10.0));
}

TEST_CASE("gen-data: deterministic files, sound labels, reload equality") {
  const ExperimentConfig c = tiny_config();
  const fs::path a = scratch("gen_a"), b = scratch("gen_b");
  const DataBundle d = generate_data(c);
  write_data(a, d);
  write_data(b, generate_data(c));
  for (const char* f : {kPoolFile, kCatalogFile, kTripletsFile}) CHECK(slurp(a / f) == slurp(b / f));
  const DataSummary s = summarize(d);
  CHECK(s.unsound_labels == 0);
  CHECK(s.trajectories[0] + s.trajectories[1] + s.trajectories[2] == 48);
  CHECK(s.triplets[0] + s.triplets[1] + s.triplets[2] == d.triplets.items.size());
  CHECK(format_summary(s).find("unsound labels: 0") != std::string::npos);

  const DataBundle loaded = load_data(a);
  write_data(b, loaded);
  for (const char* f : {kPoolFile, kCatalogFile, kTripletsFile}) CHECK(slurp(a / f) == slurp(b / f));
  CHECK_THROWS(load_data(scratch("gen_empty")));
}

TEST_CASE("train-latent: history rows, frozen flag, checkpoint reload and resume") {
  const ExperimentConfig c = tiny_config();
  const DataBundle d = generate_data(c);
  const LatentRun full = run_train_latent(c, d, false);
  CHECK(full.result.history.size() == 6);
  const LatentRun again = run_train_latent(c, d, false);
  CHECK(full.table.to_csv() == again.table.to_csv());

  const LatentRun frozen = run_train_latent(c, d, true);
  for (const latent::EpochRecord& r : frozen.result.history) CHECK(r.phase != latent::Phase::Cofinetune);
  bool saw_zero = false;
  for (const io::MetricRow& r : frozen.table.rows()) {
    if (r.metric == "phase2_epochs") saw_zero = r.value == 0.0;
  }
  CHECK(saw_zero);

  const fs::path dir = scratch("ckpt");
  io::write_json(dir / kCheckpointFile, checkpoint_to_json(full.checkpoint));
  const LatentCheckpoint loaded = load_checkpoint(dir / kCheckpointFile, d.catalog);
  CHECK(loaded.encoders.trajectory == full.checkpoint.encoders.trajectory);
  CHECK(loaded.best_epoch == full.checkpoint.best_epoch);

  lang::Catalog other = lang::Catalog::builtin();
  other.import_paraphrases({{1, 1, {"zip along quicker"}}});
  CHECK_THROWS_AS(load_checkpoint(dir / kCheckpointFile, other), io::FormatError);

  const LatentRun resumed = run_train_latent(c, d, false, &loaded);
  CHECK(resumed.result.history.front().val_accuracy == doctest::Approx(full.result.history[loaded.best_epoch].val_accuracy));
  CHECK(resumed.checkpoint.encoders.trajectory.step_count() >= loaded.encoders.trajectory.step_count());
  if (resumed.result.best_epoch > 0) {
    CHECK(resumed.checkpoint.encoders.trajectory.step_count() > loaded.encoders.trajectory.step_count());
  }
}

TEST_CASE("improve: seeded tables, suboptimal starts and a flat single-item pool") {
  const ExperimentConfig c = tiny_config();
  const DataBundle d = generate_data(c);
  const latent::EncoderPair enc = run_train_latent(c, d, false).checkpoint.encoders;
  const ImproveRun a = run_improve(c, d, enc);
  const ImproveRun b = run_improve(c, d, enc);
  CHECK(a.table.to_csv() == b.table.to_csv());
  CHECK(a.traces_csv == b.traces_csv);
  REQUIRE(a.mean.size() == 5);
  for (double m : a.mean) {
    CHECK(m >= 0.0);
    CHECK(m <= 1.0);
  }
  // Starts come from the bottom quartile of each human's normalized reward.
  for (int s = 0; s < c.improve.seeds; ++s) {
    const std::vector<double> norm = normalized_rewards(d.pool, human_weights(c, s));
    std::vector<double> sorted = norm;
    std::sort(sorted.begin(), sorted.end());
    const double cut = sorted[sorted.size() / 4 - 1];
    Rng rng = make_rng(s);
    for (int k = 0; k < 20; ++k) {
      const int id = draw_suboptimal_start(d.pool, human_weights(c, s), rng);
      CHECK(norm[static_cast<std::size_t>(id)] <= cut);
    }
  }
  CHECK(a.traces_csv.rfind("seed,iteration,shown_id,utterance,chosen_id,objective,true_reward\n", 0) == 0);

  DataBundle one = d;
  one.pool.items.resize(1);
  ExperimentConfig c1 = c;
  c1.improve.seeds = 1;
  const ImproveRun flat = run_improve(c1, one, enc);
  REQUIRE(flat.mean.size() == 5);
  for (double m : flat.mean) CHECK(m == 1.0);
  std::istringstream lines(flat.traces_csv);
  std::string line;
  std::getline(lines, line);
  while (std::getline(lines, line)) CHECK(line.find(",0,\"") != std::string::npos);
}

TEST_CASE("learn-reward: curve families, AUC rows, ablation flags and reproducibility") {
  const ExperimentConfig c = tiny_config();
  const DataBundle d = generate_data(c);
  const latent::EncoderPair enc = run_train_latent(c, d, false).checkpoint.encoders;
  const auto methods = methods_from_list("all");
  REQUIRE(methods.size() == 4);
  CHECK(methods_from_list("language,comparison").size() == 2);
  CHECK_THROWS(methods_from_list("language,language"));
  CHECK_THROWS(methods_from_list("vibes"));

  const RewardStudy a = run_learn_reward(c, d, enc, methods);
  CHECK(a.cells.size() == 2u * 2u * 4u);
  std::set<std::string> names;
  int auc_rows = 0;
  for (const io::MetricRow& r : a.table.rows()) {
    names.insert(r.method);
    if (r.metric.ends_with("_auc")) ++auc_rows;
  }
  CHECK(names == std::set<std::string>{"language", "comparison", "ablation-explicit", "ablation-implicit"});
  CHECK(auc_rows == 2 * 16);
  for (const RewardCell& cell : a.cells) {
    std::vector<int> xs;
    for (const reward::CurvePoint& p : cell.run.cross_entropy.points) xs.push_back(p.queries);
    CHECK(xs == std::vector<int>{0, 3, 6});
  }
  const RewardStudy b = run_learn_reward(c, d, enc, methods);
  CHECK(a.table.to_csv() == b.table.to_csv());

  // Same human, seed and feedback stream: the three language methods see the
  // same first query, and each ablation equals training on one loss term.
  const RewardCell& full = a.cells[0];
  const RewardCell& expl = a.cells[2];
  const RewardCell& impl = a.cells[3];
  CHECK(full.method == RewardMethod::Language);
  CHECK(expl.method == RewardMethod::AblationExplicit);
  CHECK(impl.method == RewardMethod::AblationImplicit);
  CHECK(full.run.cross_entropy.points[0].value == expl.run.cross_entropy.points[0].value);
  CHECK(full.run.model.params() != expl.run.model.params());
  CHECK(expl.run.model.params() != impl.run.model.params());
}
