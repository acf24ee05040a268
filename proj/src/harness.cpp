#include "langpref/harness.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "langpref/simhuman.hpp"

namespace langpref::harness {

using io::Json;

namespace {

std::uint64_t run_seed(std::uint64_t master, std::uint64_t stream_id, std::uint64_t index) {
  return derive_seed(derive_seed(master, stream_id), index);
}

// Reads an object field by field; finish() rejects keys nobody asked for.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw io::FormatError(where_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& ex) {
      throw io::FormatError(where_ + "." + key + ": " + ex.what());
    }
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw io::FormatError("unknown field '" + where_ + "." + k + "'");
    }
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

Json vec4(const world::FeatureVector& v) { return Json::array({v[0], v[1], v[2], v[3]}); }

world::FeatureVector vec4_from(const Json& j, const std::string& where) {
  if (!j.is_array() || j.size() != world::kFeatureCount) throw io::FormatError(where + " must have 4 entries");
  return world::FeatureVector(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

}  // namespace

const char* start_rule_name(StartRule r) { return r == StartRule::Uniform ? "uniform" : "bottom-quartile"; }

StartRule start_rule_from_name(const std::string& name) {
  if (name == "bottom-quartile") return StartRule::BottomQuartile;
  if (name == "uniform") return StartRule::Uniform;
  throw std::invalid_argument("unknown start rule '" + name + "'");
}

void ExperimentConfig::validate() const {
  world.validate();
  if (pool_size < 10) throw std::invalid_argument("pool size must be at least 10");
  splits.validate();
  if (pairs.train < 1 || pairs.val < 0 || pairs.test < 0) throw std::invalid_argument("pairs per split must be positive");
  latent.validate();
  if (improve.iterations < 1) throw std::invalid_argument("improvement needs at least one iteration");
  if (improve.seeds < 1) throw std::invalid_argument("improvement needs at least one seed");
  if (humans.weights.empty() && humans.count < 1) throw std::invalid_argument("need at least one simulated human");
  if (!(humans.norm > 0.0)) throw std::invalid_argument("human reward norm must be positive");
  if (!(humans.beta > 0.0)) throw std::invalid_argument("human temperature must be positive");
  for (const world::FeatureVector& w : humans.weights) {
    if (!w.allFinite() || w.isZero(0.0)) throw std::invalid_argument("human weights must be finite and nonzero");
  }
  if (reward.queries < 0) throw std::invalid_argument("query count must be nonnegative");
  if (reward.seeds < 1) throw std::invalid_argument("reward learning needs at least one seed");
  reward.model.validate();
  if (gateway.improve_max_iterations < 1 || gateway.learn_max_iterations < 1 || gateway.rate_every < 1) {
    throw std::invalid_argument("gateway limits must be positive");
  }
  if (gateway.port < 0 || gateway.port > 65535) throw std::invalid_argument("port out of range");
  if (output_dir.empty()) throw std::invalid_argument("output directory must be set");
}

Json config_to_json(const ExperimentConfig& c) {
  Json d = io::document("experiment-config");
  d["master_seed"] = c.master_seed;
  d["output_dir"] = c.output_dir;
  d["world"] = io::to_json(c.world);
  d["pool_size"] = c.pool_size;
  d["splits"] = {{"train", c.splits.train}, {"val", c.splits.val}, {"test", c.splits.test}};
  d["pairs"] = {{"train", c.pairs.train}, {"val", c.pairs.val}, {"test", c.pairs.test}};
  d["latent"] = {{"latent_dim", c.latent.latent_dim},
                 {"hidden", c.latent.hidden},
                 {"norm_weight_trajectory", c.latent.norm_weight_trajectory},
                 {"norm_weight_language", c.latent.norm_weight_language},
                 {"frozen_epochs", c.latent.frozen_epochs},
                 {"cofinetune_epochs", c.latent.cofinetune_epochs},
                 {"learning_rate", c.latent.learning_rate},
                 {"batch_size", c.latent.batch_size}};
  d["improve"] = {{"iterations", c.improve.iterations},
                  {"seeds", c.improve.seeds},
                  {"objective", improve::objective_name(c.improve.improver.objective)},
                  {"tabu", c.improve.improver.tabu},
                  {"start", start_rule_name(c.improve.start)}};
  Json weights = Json::array();
  for (const world::FeatureVector& w : c.humans.weights) weights.push_back(vec4(w));
  d["humans"] = {{"weights", weights}, {"count", c.humans.count}, {"norm", c.humans.norm}, {"beta", c.humans.beta}};
  const reward::RewardConfig& m = c.reward.model;
  d["reward"] = {{"queries", c.reward.queries},
                 {"seeds", c.reward.seeds},
                 {"hidden", m.hidden},
                 {"learning_rate", m.learning_rate},
                 {"epochs_per_query", m.epochs_per_query},
                 {"weight_decay", m.weight_decay},
                 {"negatives", m.negatives},
                 {"retrain_from_scratch", m.retrain_from_scratch},
                 {"checkpoint_every", m.checkpoint_every},
                 {"eval_pairs", m.eval_pairs}};
  Json gw = {{"improve_max_iterations", c.gateway.improve_max_iterations},
             {"learn_max_iterations", c.gateway.learn_max_iterations},
             {"rate_every", c.gateway.rate_every},
             {"port", c.gateway.port}};
  gw["reference_w"] = c.gateway.reference_w ? vec4(*c.gateway.reference_w) : Json(nullptr);
  d["gateway"] = std::move(gw);
  return d;
}

ExperimentConfig config_from_json(const Json& doc) {
  io::expect_document(doc, "experiment-config");
  ExperimentConfig c;
  Reader top(doc, "config");
  std::string ignored;
  int version = 0;
  top.get("format_version", version);
  top.get("kind", ignored);
  top.get("master_seed", c.master_seed);
  top.get("output_dir", c.output_dir);
  if (const Json* w = top.child("world")) c.world = io::world_config_from_json(*w);
  top.get("pool_size", c.pool_size);
  if (const Json* s = top.child("splits")) {
    Reader r(*s, "splits");
    r.get("train", c.splits.train);
    r.get("val", c.splits.val);
    r.get("test", c.splits.test);
    r.finish();
  }
  if (const Json* s = top.child("pairs")) {
    Reader r(*s, "pairs");
    r.get("train", c.pairs.train);
    r.get("val", c.pairs.val);
    r.get("test", c.pairs.test);
    r.finish();
  }
  if (const Json* s = top.child("latent")) {
    Reader r(*s, "latent");
    r.get("latent_dim", c.latent.latent_dim);
    r.get("hidden", c.latent.hidden);
    r.get("norm_weight_trajectory", c.latent.norm_weight_trajectory);
    r.get("norm_weight_language", c.latent.norm_weight_language);
    r.get("frozen_epochs", c.latent.frozen_epochs);
    r.get("cofinetune_epochs", c.latent.cofinetune_epochs);
    r.get("learning_rate", c.latent.learning_rate);
    r.get("batch_size", c.latent.batch_size);
    r.finish();
  }
  if (const Json* s = top.child("improve")) {
    Reader r(*s, "improve");
    std::string objective = improve::objective_name(c.improve.improver.objective);
    std::string start = start_rule_name(c.improve.start);
    r.get("iterations", c.improve.iterations);
    r.get("seeds", c.improve.seeds);
    r.get("objective", objective);
    r.get("tabu", c.improve.improver.tabu);
    r.get("start", start);
    r.finish();
    c.improve.improver.objective = improve::ImproverConfig::objective_from_name(objective);
    c.improve.start = start_rule_from_name(start);
  }
  if (const Json* s = top.child("humans")) {
    Reader r(*s, "humans");
    if (const Json* ws = r.child("weights")) {
      if (!ws->is_array()) throw io::FormatError("humans.weights must be a list");
      for (const Json& w : *ws) c.humans.weights.push_back(vec4_from(w, "humans.weights[]"));
    }
    r.get("count", c.humans.count);
    r.get("norm", c.humans.norm);
    r.get("beta", c.humans.beta);
    r.finish();
  }
  if (const Json* s = top.child("reward")) {
    Reader r(*s, "reward");
    reward::RewardConfig& m = c.reward.model;
    r.get("queries", c.reward.queries);
    r.get("seeds", c.reward.seeds);
    r.get("hidden", m.hidden);
    r.get("learning_rate", m.learning_rate);
    r.get("epochs_per_query", m.epochs_per_query);
    r.get("weight_decay", m.weight_decay);
    r.get("negatives", m.negatives);
    r.get("retrain_from_scratch", m.retrain_from_scratch);
    r.get("checkpoint_every", m.checkpoint_every);
    r.get("eval_pairs", m.eval_pairs);
    r.finish();
  }
  if (const Json* s = top.child("gateway")) {
    Reader r(*s, "gateway");
    r.get("improve_max_iterations", c.gateway.improve_max_iterations);
    r.get("learn_max_iterations", c.gateway.learn_max_iterations);
    r.get("rate_every", c.gateway.rate_every);
    r.get("port", c.gateway.port);
    if (const Json* w = r.child("reference_w"); w && !w->is_null()) {
      c.gateway.reference_w = vec4_from(*w, "gateway.reference_w");
    }
    r.finish();
  }
  top.finish();
  c.latent.seed = c.master_seed;
  try {
    c.validate();
  } catch (const std::invalid_argument& ex) {
    throw io::FormatError(std::string("config: ") + ex.what());
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  try {
    return config_from_json(io::read_json(path));
  } catch (const io::FormatError& ex) {
    throw io::FormatError(path.string() + ": " + ex.what());
  }
}

std::string config_digest(const ExperimentConfig& cfg) { return io::fnv1a_hex(config_to_json(cfg).dump()); }

// ---------------------------------------------------------------------------
// Data

DataBundle generate_data(const ExperimentConfig& cfg) {
  DataBundle d;
  d.pool = world::generate_pool(cfg.world, cfg.pool_size, cfg.master_seed);
  world::split(d.pool, cfg.splits, cfg.master_seed);
  d.catalog = lang::Catalog::builtin();
  d.triplets = lang::build_triplets(d.pool, d.catalog, lang::default_epsilon(d.pool), cfg.pairs, cfg.master_seed);
  return d;
}

void write_data(const std::filesystem::path& dir, const DataBundle& data) {
  std::filesystem::create_directories(dir);
  io::write_json(dir / kPoolFile, io::pool_to_json(data.pool));
  io::write_json(dir / kCatalogFile, io::catalog_to_json(data.catalog));
  io::write_json(dir / kTripletsFile, io::triplets_to_json(data.triplets));
}

DataBundle load_data(const std::filesystem::path& dir) {
  DataBundle d;
  const auto load = [&](const char* name, auto&& parse) {
    const std::filesystem::path p = dir / name;
    try {
      parse(io::read_json(p));
    } catch (const io::FormatError& ex) {
      throw io::FormatError(p.string() + ": " + ex.what());
    }
  };
  load(kPoolFile, [&](const Json& j) { d.pool = io::pool_from_json(j); });
  load(kCatalogFile, [&](const Json& j) { d.catalog = io::catalog_from_json(j); });
  load(kTripletsFile, [&](const Json& j) { d.triplets = io::triplets_from_json(j, d.catalog); });
  return d;
}

DataSummary summarize(const DataBundle& data) {
  DataSummary s;
  for (const world::PoolItem& it : data.pool.items) {
    s.trajectories[static_cast<int>(it.split)]++;
    if (it.fallback) ++s.fallbacks;
  }
  std::map<int, world::FeatureVector> recomputed;
  for (const world::PoolItem& it : data.pool.items) {
    recomputed[it.trajectory.id] = world::features(it.trajectory, data.pool.config);
  }
  const lang::Epsilon eps = lang::default_epsilon(data.pool);
  for (const lang::Triplet& t : data.triplets.items) {
    s.triplets[static_cast<int>(t.split)]++;
    const int d = t.utterance.feature;
    const double delta = recomputed.at(t.b_id)[d] - recomputed.at(t.a_id)[d];
    const bool same_split = data.pool.by_id(t.a_id).split == t.split && data.pool.by_id(t.b_id).split == t.split;
    if (!same_split || !(t.utterance.direction * delta > eps[static_cast<std::size_t>(d)])) ++s.unsound_labels;
  }
  return s;
}

std::string format_summary(const DataSummary& s) {
  std::string out;
  for (int k = 0; k < 3; ++k) {
    out += std::string(world::split_name(static_cast<world::Split>(k))) + ": " + std::to_string(s.trajectories[k]) +
           " trajectories, " + std::to_string(s.triplets[k]) + " triplets\n";
  }
  out += "stratum fallbacks: " + std::to_string(s.fallbacks) + "\n";
  out += "unsound labels: " + std::to_string(s.unsound_labels) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Latent

Json checkpoint_to_json(const LatentCheckpoint& ckpt) {
  Json d = io::document("latent-checkpoint");
  d["best_epoch"] = ckpt.best_epoch;
  d["frozen_language"] = ckpt.frozen_language;
  d["vocabulary"] = ckpt.vocabulary;
  d["encoders"] = io::encoders_to_json(ckpt.encoders);
  return d;
}

LatentCheckpoint checkpoint_from_json(const Json& doc) {
  io::expect_document(doc, "latent-checkpoint");
  LatentCheckpoint c;
  try {
    c.best_epoch = doc.at("best_epoch").get<int>();
    c.frozen_language = doc.at("frozen_language").get<bool>();
    c.vocabulary = doc.at("vocabulary").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& ex) {
    throw io::FormatError(std::string("latent checkpoint: ") + ex.what());
  }
  c.encoders = io::encoders_from_json(doc.at("encoders"));
  if (static_cast<int>(c.vocabulary.size()) != c.encoders.vocab_size()) {
    throw io::FormatError("checkpoint vocabulary size differs from its embedding table");
  }
  return c;
}

LatentCheckpoint load_checkpoint(const std::filesystem::path& path, const lang::Catalog& catalog) {
  LatentCheckpoint c;
  try {
    c = checkpoint_from_json(io::read_json(path));
  } catch (const io::FormatError& ex) {
    throw io::FormatError(path.string() + ": " + ex.what());
  }
  if (c.vocabulary != catalog.vocabulary().words()) {
    throw io::FormatError(path.string() + ": checkpoint vocabulary does not match the catalog");
  }
  return c;
}

LatentRun run_train_latent(const ExperimentConfig& cfg, const DataBundle& data, bool frozen_language,
                           const LatentCheckpoint* resume) {
  latent::LatentConfig lc = cfg.latent;
  lc.seed = cfg.master_seed;
  if (frozen_language) {
    lc.frozen_epochs += lc.cofinetune_epochs;
    lc.cofinetune_epochs = 0;
  }
  LatentRun run;
  run.result = latent::train_latent(data.triplets, data.pool, data.catalog.vocabulary().size(), lc,
                                    resume ? &resume->encoders : nullptr);
  run.checkpoint.encoders = run.result.encoders;
  run.checkpoint.vocabulary = data.catalog.vocabulary().words();
  run.checkpoint.best_epoch = run.result.best_epoch;
  run.checkpoint.frozen_language = frozen_language;

  const std::string method = frozen_language ? "frozen-language" : "cofinetune";
  const auto seed = static_cast<std::int64_t>(cfg.master_seed);
  for (const latent::EpochRecord& r : run.result.history) {
    const double x = r.epoch;
    run.table.add({"train-latent", method, seed, x, "phase", static_cast<double>(static_cast<int>(r.phase))});
    run.table.add({"train-latent", method, seed, x, "train_loss", r.train_loss});
    run.table.add({"train-latent", method, seed, x, "val_loss", r.val_loss});
    run.table.add({"train-latent", method, seed, x, "val_accuracy", r.val_accuracy});
  }
  const double best = run.result.best_epoch;
  run.test_accuracy = data.triplets.count(world::Split::Test) > 0
                          ? latent::accuracy(run.result.encoders, data.triplets, world::Split::Test, data.pool)
                          : NAN;
  run.table.add({"train-latent", method, seed, best, "best_epoch", best});
  run.table.add({"train-latent", method, seed, best, "phase2_epochs", static_cast<double>(lc.cofinetune_epochs)});
  run.table.add({"train-latent", method, seed, best, "step_count",
                 static_cast<double>(run.result.encoders.trajectory.step_count())});
  run.table.add({"train-latent", method, seed, best, "test_accuracy", run.test_accuracy});
  return run;
}

// ---------------------------------------------------------------------------
// Improvement

std::vector<double> normalized_rewards(const world::TrajectoryPool& pool, const world::GroundTruthReward& w) {
  std::vector<double> r;
  for (const world::PoolItem& it : pool.items) r.push_back(world::true_reward(w, it.features));
  const auto [lo, hi] = std::minmax_element(r.begin(), r.end());
  const double l = *lo, span = *hi - *lo;
  for (double& v : r) v = span > 0.0 ? (v - l) / span : 1.0;
  return r;
}

int draw_suboptimal_start(const world::TrajectoryPool& pool, const world::GroundTruthReward& w, Rng& rng) {
  if (pool.items.empty()) throw std::invalid_argument("pool is empty");
  std::vector<std::pair<double, int>> ranked;
  for (const world::PoolItem& it : pool.items) ranked.emplace_back(world::true_reward(w, it.features), it.trajectory.id);
  std::sort(ranked.begin(), ranked.end());
  const std::size_t quarter = std::max<std::size_t>(1, ranked.size() / 4);
  std::uniform_int_distribution<std::size_t> pick(0, quarter - 1);
  return ranked[pick(rng)].second;
}

world::GroundTruthReward human_weights(const ExperimentConfig& cfg, int index) {
  if (!cfg.humans.weights.empty()) {
    world::GroundTruthReward w;
    w.w = cfg.humans.weights[static_cast<std::size_t>(index) % cfg.humans.weights.size()];
    return w;
  }
  Rng rng = run_rng(cfg.master_seed, stream::kHumans, static_cast<std::uint64_t>(index));
  return sim::draw_reward(rng, cfg.humans.norm);
}

namespace {

std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

ImproveRun run_improve(const ExperimentConfig& cfg, const DataBundle& data, const latent::EncoderPair& enc) {
  const improve::CandidateSet cands = improve::CandidateSet::from_pool(enc, data.pool);
  const int n = cfg.improve.iterations;
  const std::string method = improve::objective_name(cfg.improve.improver.objective);
  ImproveRun run;
  run.traces_csv = "seed,iteration,shown_id,utterance,chosen_id,objective,true_reward\n";
  std::vector<std::vector<double>> per_iter(static_cast<std::size_t>(n) + 1);
  double optimum_raw = 0.0;
  for (int s = 0; s < cfg.improve.seeds; ++s) {
    const world::GroundTruthReward w = human_weights(cfg, s);
    const sim::SimulatedHuman human = sim::SimulatedHuman::for_pool(w, data.pool, cfg.humans.beta);
    optimum_raw += world::true_reward(w, human.optimal_features);
    double lo = INFINITY, hi = -INFINITY;
    for (const world::PoolItem& it : data.pool.items) {
      lo = std::min(lo, world::true_reward(w, it.features));
      hi = std::max(hi, world::true_reward(w, it.features));
    }
    const auto normalize = [&](double r) { return hi > lo ? (r - lo) / (hi - lo) : 1.0; };

    Rng rng = run_rng(cfg.master_seed, stream::kImprove, static_cast<std::uint64_t>(s));
    int start = 0;
    if (cfg.improve.start == StartRule::BottomQuartile) {
      start = draw_suboptimal_start(data.pool, w, rng);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, data.pool.items.size() - 1);
      start = data.pool.items[pick(rng)].trajectory.id;
    }
    const improve::FeedbackSource source = [&](int, const world::FeatureVector& theta) {
      return sim::language_feedback(human, theta, data.catalog, rng);
    };
    const improve::ImprovementTrace trace =
        improve::improve_loop(cands, start, source, n, enc, w, cfg.improve.improver);
    if (!trace.complete) ++run.incomplete;
    for (const improve::TraceEntry& e : trace.entries) {
      const double v = normalize(*e.true_reward);
      per_iter[static_cast<std::size_t>(e.iteration)].push_back(v);
      run.table.add({"improve", method, s, static_cast<double>(e.iteration), "true_reward_normalized", v});
      run.traces_csv += std::to_string(s) + "," + std::to_string(e.iteration) + "," + std::to_string(e.shown_id) + "," +
                        csv_quote(e.utterance) + "," + std::to_string(e.chosen_id) + "," +
                        io::format_double(e.objective) + "," + io::format_double(*e.true_reward) + "\n";
    }
  }
  for (std::size_t i = 0; i < per_iter.size(); ++i) {
    const std::vector<double>& v = per_iter[i];
    double mean = NAN, sd = NAN;
    if (!v.empty()) {
      mean = 0.0;
      for (double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      sd = std::sqrt(ss / static_cast<double>(v.size()));
    }
    run.mean.push_back(mean);
    run.stddev.push_back(sd);
    const double x = static_cast<double>(i);
    run.table.add({"improve", method, -1, x, "true_reward_normalized_mean", mean});
    run.table.add({"improve", method, -1, x, "true_reward_normalized_std", sd});
  }
  // The pool optimum is 1 in normalized units by construction.
  run.table.add({"improve", "optimum", -1, 0.0, "true_reward_normalized_mean", 1.0});
  run.table.add({"improve", "optimum", -1, 0.0, "true_reward_raw_mean", optimum_raw / cfg.improve.seeds});
  return run;
}

// ---------------------------------------------------------------------------
// Reward learning

const char* method_name(RewardMethod m) {
  switch (m) {
    case RewardMethod::Language: return "language";
    case RewardMethod::Comparison: return "comparison";
    case RewardMethod::AblationExplicit: return "ablation-explicit";
    case RewardMethod::AblationImplicit: return "ablation-implicit";
  }
  return "?";
}

RewardMethod method_from_name(const std::string& name) {
  for (RewardMethod m : {RewardMethod::Language, RewardMethod::Comparison, RewardMethod::AblationExplicit,
                         RewardMethod::AblationImplicit}) {
    if (name == method_name(m)) return m;
  }
  throw std::invalid_argument("unknown reward-learning method '" + name + "'");
}

std::vector<RewardMethod> methods_from_list(const std::string& list) {
  if (list == "all") {
    return {RewardMethod::Language, RewardMethod::Comparison, RewardMethod::AblationExplicit,
            RewardMethod::AblationImplicit};
  }
  std::vector<RewardMethod> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = list.find(',', start);
    const RewardMethod m = method_from_name(list.substr(start, comma - start));
    if (std::find(out.begin(), out.end(), m) != out.end()) throw std::invalid_argument("method listed twice");
    out.push_back(m);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

RewardStudy run_learn_reward(const ExperimentConfig& cfg, const DataBundle& data, const latent::EncoderPair& enc,
                             const std::vector<RewardMethod>& methods) {
  if (methods.empty()) throw std::invalid_argument("no reward-learning method selected");
  const reward::QueryPool qp = reward::QueryPool::build(enc, data.pool, world::Split::Train);
  const reward::CatalogEmbeddings catalog = reward::CatalogEmbeddings::build(enc, data.catalog);
  const int humans = cfg.humans.weights.empty() ? cfg.humans.count : static_cast<int>(cfg.humans.weights.size());
  RewardStudy study;
  for (int h = 0; h < humans; ++h) {
    const world::GroundTruthReward w = human_weights(cfg, h);
    const sim::SimulatedHuman human = sim::SimulatedHuman::for_pool(w, data.pool, cfg.humans.beta);
    const std::string experiment = "learn-reward-h" + std::to_string(h);
    for (int s = 0; s < cfg.reward.seeds; ++s) {
      const auto index = static_cast<std::uint64_t>(s);
      const reward::EvalSet eval = reward::EvalSet::build(enc, data.pool, world::Split::Test, cfg.reward.model.eval_pairs,
                                                          run_seed(cfg.master_seed, stream::kEvalPairs, index));
      const std::uint64_t learner_seed = run_seed(cfg.master_seed, stream::kReward, index);
      for (RewardMethod m : methods) {
        // Every method sees the same feedback stream for a (human, seed) cell.
        Rng fr = run_rng(cfg.master_seed, stream::kFeedback, static_cast<std::uint64_t>(h) * 1000003u + index);
        reward::RewardConfig rc = cfg.reward.model;
        RewardCell cell{m, h, s, {}};
        if (m == RewardMethod::Comparison) {
          const reward::ChoiceSource source = [&](int, int, const world::FeatureVector& a, const world::FeatureVector& b) {
            return sim::comparison_choice(human, a, b, fr);
          };
          cell.run = reward::learn_reward_comparison(qp, source, cfg.reward.queries, rc, w, eval, learner_seed);
        } else {
          rc.loss = m == RewardMethod::AblationExplicit   ? reward::LossMode::ExplicitOnly
                    : m == RewardMethod::AblationImplicit ? reward::LossMode::ImplicitOnly
                                                          : reward::LossMode::Full;
          const reward::LanguageSource source = [&](int, const world::FeatureVector& theta) {
            return sim::language_feedback(human, theta, data.catalog, fr);
          };
          cell.run = reward::learn_reward_language(qp, source, enc, catalog, cfg.reward.queries, rc, w, eval, learner_seed);
        }
        const std::string name = method_name(m);
        for (const reward::LearningCurve* c : {&cell.run.cross_entropy, &cell.run.true_reward}) {
          for (const reward::CurvePoint& p : c->points) {
            study.table.add({experiment, name, s, static_cast<double>(p.queries), c->metric, p.value});
          }
          if (c->points.size() >= 2) {
            study.table.add({experiment, name, s, static_cast<double>(c->points.back().queries), c->metric + "_auc",
                             reward::auc(*c)});
          }
        }
        study.cells.push_back(std::move(cell));
      }
    }
  }
  return study;
}

}  // namespace langpref::harness
