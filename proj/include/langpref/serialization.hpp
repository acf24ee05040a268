#pragma once

// Versioned JSON documents for pools, catalogs, triplets and checkpoints, and
// the CSV metrics table. Every document is {"format_version", "kind", ...}.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "langpref/latent.hpp"
#include "langpref/rewardlab.hpp"

namespace langpref::io {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Json document(const std::string& kind);
/// Throws FormatError unless `doc` is a document of this kind and version.
void expect_document(const Json& doc, const std::string& kind);

/// Two-space indented, trailing newline. Errors name the path.
void write_json(const std::filesystem::path& path, const Json& doc);
Json read_json(const std::filesystem::path& path);
std::string dump(const Json& doc);

Json to_json(const world::WorldConfig& c);
world::WorldConfig world_config_from_json(const Json& j);

Json pool_to_json(const world::TrajectoryPool& pool);
/// Validates every trajectory against the stored world config.
world::TrajectoryPool pool_from_json(const Json& doc);

Json catalog_to_json(const lang::Catalog& catalog);
lang::Catalog catalog_from_json(const Json& doc);

Json triplets_to_json(const lang::TripletDataset& data);
/// Texts are re-tokenized against the catalog; unknown texts are rejected.
lang::TripletDataset triplets_from_json(const Json& doc, const lang::Catalog& catalog);

/// Values, optimizer moments and step count.
Json params_to_json(const diff::ParamSet& params);
diff::ParamSet params_from_json(const Json& j);

Json encoders_to_json(const latent::EncoderPair& enc);
latent::EncoderPair encoders_from_json(const Json& doc);

Json reward_model_to_json(const reward::RewardModel& model);
reward::RewardModel reward_model_from_json(const Json& doc);

/// 64-bit FNV-1a of `text` as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view text);

/// Shortest round-trip decimal form.
std::string format_double(double v);

struct MetricRow {
  std::string experiment;
  std::string method;
  std::int64_t seed = 0;
  double x = 0.0;
  std::string metric;
  double value = 0.0;
};

/// Append-only rows under the fixed header experiment,method,seed,x,metric,value.
class MetricsTable {
 public:
  static constexpr const char* kHeader = "experiment,method,seed,x,metric,value";

  void add(MetricRow row);
  void append(const MetricsTable& other);
  const std::vector<MetricRow>& rows() const { return rows_; }

  std::string to_csv() const;
  void write(const std::filesystem::path& path) const;
  /// Rejects a wrong header, wrong column counts and unparsable numbers.
  static MetricsTable parse(const std::string& csv);
  static MetricsTable read(const std::filesystem::path& path);

 private:
  std::vector<MetricRow> rows_;
};

}  // namespace langpref::io
