#include "langpref/serialization.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace langpref::io {

namespace {

double finite(double v, const char* what) {
  if (!std::isfinite(v)) throw FormatError(std::string("non-finite value in ") + what);
  return v;
}

Json matrix_values(const diff::Tensor& t) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    for (Eigen::Index c = 0; c < t.cols(); ++c) a.push_back(finite(t(r, c), "tensor"));
  }
  return a;
}

diff::Tensor matrix_from(const Json& values, Eigen::Index rows, Eigen::Index cols, const std::string& name) {
  if (!values.is_array() || static_cast<Eigen::Index>(values.size()) != rows * cols) {
    throw FormatError("tensor '" + name + "' has " + std::to_string(values.size()) + " values, shape needs " +
                      std::to_string(rows * cols));
  }
  diff::Tensor t(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) t(r, c) = values[k++].get<double>();
  }
  return t;
}

Json vec4(const world::FeatureVector& v) { return Json::array({v[0], v[1], v[2], v[3]}); }

world::FeatureVector vec4_from(const Json& j) {
  if (!j.is_array() || j.size() != world::kFeatureCount) throw FormatError("feature vector must have 4 entries");
  return world::FeatureVector(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

template <class F>
auto field(const Json& j, const char* key, F&& convert) {
  if (!j.contains(key)) throw FormatError(std::string("missing field '") + key + "'");
  try {
    return convert(j.at(key));
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(std::string("field '") + key + "': " + ex.what());
  }
}

template <class T>
T get(const Json& j, const char* key) {
  return field(j, key, [](const Json& v) { return v.get<T>(); });
}

}  // namespace

Json document(const std::string& kind) {
  Json d;
  d["format_version"] = kFormatVersion;
  d["kind"] = kind;
  return d;
}

void expect_document(const Json& doc, const std::string& kind) {
  if (!doc.is_object()) throw FormatError("expected a '" + kind + "' document object");
  const int version = get<int>(doc, "format_version");
  if (version != kFormatVersion) {
    throw FormatError("unsupported format_version " + std::to_string(version) + " for '" + kind + "'");
  }
  const std::string k = get<std::string>(doc, "kind");
  if (k != kind) throw FormatError("expected a '" + kind + "' document, found '" + k + "'");
}

std::string dump(const Json& doc) { return doc.dump(2) + "\n"; }

void write_json(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << dump(doc);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw FormatError(path.string() + ": " + ex.what());
  }
}

// ---------------------------------------------------------------------------

Json to_json(const world::WorldConfig& c) {
  Json j;
  j["x_min"] = c.x_min;
  j["x_max"] = c.x_max;
  j["y_min"] = c.y_min;
  j["y_max"] = c.y_max;
  j["pan"] = {c.pan.x(), c.pan.y()};
  j["spoon"] = {c.spoon.x(), c.spoon.y()};
  j["horizon"] = c.horizon;
  j["dt"] = c.dt;
  return j;
}

world::WorldConfig world_config_from_json(const Json& j) {
  world::WorldConfig c;
  const auto point = [](const Json& v) {
    if (!v.is_array() || v.size() != 2) throw FormatError("point must have 2 entries");
    return world::Point(v[0].get<double>(), v[1].get<double>());
  };
  if (j.contains("x_min")) c.x_min = get<double>(j, "x_min");
  if (j.contains("x_max")) c.x_max = get<double>(j, "x_max");
  if (j.contains("y_min")) c.y_min = get<double>(j, "y_min");
  if (j.contains("y_max")) c.y_max = get<double>(j, "y_max");
  if (j.contains("pan")) c.pan = field(j, "pan", point);
  if (j.contains("spoon")) c.spoon = field(j, "spoon", point);
  if (j.contains("horizon")) c.horizon = get<int>(j, "horizon");
  if (j.contains("dt")) c.dt = get<double>(j, "dt");
  c.validate();
  return c;
}

Json pool_to_json(const world::TrajectoryPool& pool) {
  Json d = document("pool");
  d["config"] = to_json(pool.config);
  Json items = Json::array();
  for (const world::PoolItem& it : pool.items) {
    Json j;
    j["id"] = it.trajectory.id;
    j["split"] = world::split_name(it.split);
    j["stratum"] = it.stratum;
    j["fallback"] = it.fallback;
    j["clamped"] = it.trajectory.clamped;
    j["features"] = vec4(it.features);
    Json states = Json::array(), actions = Json::array();
    for (const world::State& s : it.trajectory.states) states.push_back({s.x, s.y, s.gripper_open});
    for (const world::Action& a : it.trajectory.actions) actions.push_back({a.dx, a.dy, a.toggle});
    j["states"] = std::move(states);
    j["actions"] = std::move(actions);
    items.push_back(std::move(j));
  }
  d["items"] = std::move(items);
  return d;
}

world::TrajectoryPool pool_from_json(const Json& doc) {
  expect_document(doc, "pool");
  world::TrajectoryPool pool;
  pool.config = field(doc, "config", world_config_from_json);
  std::map<int, bool> seen;
  for (const Json& j : field(doc, "items", [](const Json& v) { return v; })) {
    world::PoolItem it;
    it.trajectory.id = get<int>(j, "id");
    if (!seen.emplace(it.trajectory.id, true).second) {
      throw FormatError("duplicate trajectory id " + std::to_string(it.trajectory.id));
    }
    it.split = world::split_from_name(get<std::string>(j, "split"));
    it.stratum = get<int>(j, "stratum");
    it.fallback = get<bool>(j, "fallback");
    it.trajectory.clamped = get<bool>(j, "clamped");
    it.features = field(j, "features", vec4_from);
    for (const Json& s : field(j, "states", [](const Json& v) { return v; })) {
      if (s.size() != 3) throw FormatError("state must have 3 entries");
      it.trajectory.states.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>()});
    }
    for (const Json& a : field(j, "actions", [](const Json& v) { return v; })) {
      if (a.size() != 3) throw FormatError("action must have 3 entries");
      it.trajectory.actions.push_back({a[0].get<double>(), a[1].get<double>(), a[2].get<double>()});
    }
    try {
      world::validate_trajectory(it.trajectory, pool.config);
    } catch (const std::exception& ex) {
      throw FormatError("trajectory " + std::to_string(it.trajectory.id) + ": " + ex.what());
    }
    pool.items.push_back(std::move(it));
  }
  return pool;
}

// ---------------------------------------------------------------------------

Json catalog_to_json(const lang::Catalog& catalog) {
  Json d = document("catalog");
  Json entries = Json::array();
  for (const lang::CatalogEntry& e : catalog.entries()) {
    entries.push_back({{"feature", e.feature}, {"direction", e.direction}, {"texts", e.texts}});
  }
  d["entries"] = std::move(entries);
  return d;
}

lang::Catalog catalog_from_json(const Json& doc) {
  expect_document(doc, "catalog");
  std::vector<lang::CatalogEntry> entries;
  for (const Json& j : field(doc, "entries", [](const Json& v) { return v; })) {
    entries.push_back({get<int>(j, "feature"), get<int>(j, "direction"), get<std::vector<std::string>>(j, "texts")});
  }
  try {
    return lang::Catalog::from_entries(std::move(entries));
  } catch (const std::invalid_argument& ex) {
    throw FormatError(std::string("catalog: ") + ex.what());
  }
}

Json triplets_to_json(const lang::TripletDataset& data) {
  Json d = document("triplets");
  Json items = Json::array();
  for (const lang::Triplet& t : data.items) {
    items.push_back({{"split", world::split_name(t.split)},
                     {"a_id", t.a_id},
                     {"b_id", t.b_id},
                     {"text", t.utterance.text},
                     {"feature", t.utterance.feature},
                     {"direction", t.utterance.direction}});
  }
  d["items"] = std::move(items);
  return d;
}

lang::TripletDataset triplets_from_json(const Json& doc, const lang::Catalog& catalog) {
  expect_document(doc, "triplets");
  std::map<std::string, int> by_text;
  for (const lang::Utterance& u : catalog.utterances()) by_text.emplace(u.text, u.catalog_index);
  lang::TripletDataset data;
  for (const Json& j : field(doc, "items", [](const Json& v) { return v; })) {
    lang::Triplet t;
    t.split = world::split_from_name(get<std::string>(j, "split"));
    t.a_id = get<int>(j, "a_id");
    t.b_id = get<int>(j, "b_id");
    if (t.a_id == t.b_id) throw FormatError("triplet pairs a trajectory with itself");
    const std::string text = get<std::string>(j, "text");
    const auto it = by_text.find(text);
    if (it == by_text.end()) throw FormatError("triplet text not in catalog: '" + text + "'");
    t.utterance = catalog.at(it->second);
    if (t.utterance.feature != get<int>(j, "feature") || t.utterance.direction != get<int>(j, "direction")) {
      throw FormatError("triplet label disagrees with the catalog for '" + text + "'");
    }
    data.items.push_back(std::move(t));
  }
  return data;
}

// ---------------------------------------------------------------------------

Json params_to_json(const diff::ParamSet& params) {
  Json j;
  j["step_count"] = params.step_count();
  Json entries = Json::object();
  for (const auto& [name, p] : params.entries()) {
    entries[name] = {{"shape", {p.value.rows(), p.value.cols()}},
                     {"value", matrix_values(p.value)},
                     {"first_moment", matrix_values(p.first_moment)},
                     {"second_moment", matrix_values(p.second_moment)}};
  }
  j["params"] = std::move(entries);
  return j;
}

diff::ParamSet params_from_json(const Json& j) {
  diff::ParamSet ps;
  const std::int64_t steps = get<std::int64_t>(j, "step_count");
  if (steps < 0) throw FormatError("negative step count");
  const Json entries = field(j, "params", [](const Json& v) { return v; });
  if (!entries.is_object()) throw FormatError("'params' must be an object");
  for (const auto& [name, e] : entries.items()) {
    const auto shape = get<std::vector<Eigen::Index>>(e, "shape");
    if (shape.size() != 2 || shape[0] < 1 || shape[1] < 1) throw FormatError("bad shape for '" + name + "'");
    ps.add(name, matrix_from(e.at("value"), shape[0], shape[1], name));
    diff::Parameter& p = ps.at(name);
    p.first_moment = matrix_from(e.at("first_moment"), shape[0], shape[1], name);
    p.second_moment = matrix_from(e.at("second_moment"), shape[0], shape[1], name);
  }
  ps.set_step_count(steps);
  return ps;
}

Json encoders_to_json(const latent::EncoderPair& enc) {
  Json d = document("encoders");
  d["latent_dim"] = enc.latent_dim;
  d["dt"] = enc.dt;
  d["trajectory"] = params_to_json(enc.trajectory);
  d["language"] = params_to_json(enc.language);
  return d;
}

latent::EncoderPair encoders_from_json(const Json& doc) {
  expect_document(doc, "encoders");
  latent::EncoderPair enc;
  enc.latent_dim = get<int>(doc, "latent_dim");
  enc.dt = get<double>(doc, "dt");
  enc.trajectory = field(doc, "trajectory", params_from_json);
  enc.language = field(doc, "language", params_from_json);
  try {
    enc.check();
  } catch (const std::exception& ex) {
    throw FormatError(std::string("encoders: ") + ex.what());
  }
  return enc;
}

Json reward_model_to_json(const reward::RewardModel& model) {
  Json d = document("reward-model");
  d["params"] = params_to_json(model.params());
  return d;
}

reward::RewardModel reward_model_from_json(const Json& doc) {
  expect_document(doc, "reward-model");
  try {
    return reward::RewardModel::from_params(field(doc, "params", params_from_json));
  } catch (const diff::ShapeError& ex) {
    throw FormatError(std::string("reward model: ") + ex.what());
  }
}

// ---------------------------------------------------------------------------

std::string fnv1a_hex(std::string_view text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void MetricsTable::add(MetricRow row) {
  for (const std::string* s : {&row.experiment, &row.method, &row.metric}) {
    if (s->empty() || s->find_first_of(",\n\r\"") != std::string::npos) {
      throw std::invalid_argument("metric labels must be nonempty and free of commas, quotes and newlines");
    }
  }
  rows_.push_back(std::move(row));
}

void MetricsTable::append(const MetricsTable& other) {
  rows_.insert(rows_.end(), other.rows_.begin(), other.rows_.end());
}

std::string MetricsTable::to_csv() const {
  std::string out = std::string(kHeader) + "\n";
  for (const MetricRow& r : rows_) {
    out += r.experiment + "," + r.method + "," + std::to_string(r.seed) + "," + format_double(r.x) + "," + r.metric +
           "," + format_double(r.value) + "\n";
  }
  return out;
}

void MetricsTable::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << to_csv();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

namespace {

template <class T>
T parse_number(const std::string& s, std::size_t line) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw FormatError("line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

}  // namespace

MetricsTable MetricsTable::parse(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  if (!std::getline(in, line) || line != kHeader) throw FormatError("metrics header must be '" + std::string(kHeader) + "'");
  MetricsTable t;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      cols.push_back(line.substr(start, comma - start));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (cols.size() != 6) throw FormatError("line " + std::to_string(n) + ": expected 6 columns");
    MetricRow r{cols[0], cols[1], parse_number<std::int64_t>(cols[2], n), parse_number<double>(cols[3], n), cols[4],
                parse_number<double>(cols[5], n)};
    try {
      t.add(std::move(r));
    } catch (const std::invalid_argument& ex) {
      throw FormatError("line " + std::to_string(n) + ": " + ex.what());
    }
  }
  return t;
}

MetricsTable MetricsTable::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace langpref::io
