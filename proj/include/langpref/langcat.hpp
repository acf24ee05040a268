#pragma once

// Comparative-utterance catalog, bag-of-words tokenizer and the labeling of
// trajectory pairs into (A, B, utterance) triplets.

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "langpref/rng.hpp"
#include "langpref/worldsim.hpp"

namespace langpref::lang {

/// Lowercased, punctuation-stripped words of `text`.
std::vector<std::string> normalize_words(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kUnknown = 0;

  Vocabulary();
  /// Returns the index of `word`, inserting it if new.
  int add(const std::string& word);
  int index_of(const std::string& word) const;
  int size() const { return static_cast<int>(words_.size()); }
  const std::vector<std::string>& words() const { return words_; }

 private:
  std::vector<std::string> words_;
  std::map<std::string, int> index_;
};

/// Rejects text with no words.
std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab);

struct Utterance {
  int feature = 0;
  int direction = 1;  // +1 increases the raw quantity, -1 decreases it
  std::string text;
  std::vector<int> tokens;
  int catalog_index = -1;  // -1 for free text not drawn from the catalog
};

struct CatalogEntry {
  int feature = 0;
  int direction = 1;
  std::vector<std::string> texts;
};

/// (feature, direction) class id in [0, 2D).
inline int utterance_class(int feature, int direction) { return 2 * feature + (direction > 0 ? 1 : 0); }

class Catalog {
 public:
  /// The built-in toy-kitchen lists: height, speed, pan distance, spoon pickup.
  static Catalog builtin();
  static Catalog from_entries(std::vector<CatalogEntry> entries);

  /// Appends paraphrases; (feature, direction) pairs must already exist or be new valid classes.
  void import_paraphrases(const std::vector<CatalogEntry>& extra);

  const std::vector<CatalogEntry>& entries() const { return entries_; }
  const std::vector<Utterance>& utterances() const { return utterances_; }
  const Utterance& at(int index) const { return utterances_.at(static_cast<std::size_t>(index)); }
  std::span<const int> indices(int feature, int direction) const;
  const Vocabulary& vocabulary() const { return vocab_; }
  int size() const { return static_cast<int>(utterances_.size()); }

 private:
  void rebuild();

  std::vector<CatalogEntry> entries_;
  std::vector<Utterance> utterances_;
  std::map<int, std::vector<int>> by_class_;
  Vocabulary vocab_;
};

using Epsilon = std::array<double, world::kFeatureCount>;

/// 10% of each feature's range over the training split.
Epsilon default_epsilon(const world::TrajectoryPool& pool);

/// One utterance per feature whose change from A to B exceeds its dead-band,
/// drawn uniformly from that feature's paraphrases in the direction of change.
std::vector<Utterance> label_pair(const world::FeatureVector& a, const world::FeatureVector& b, const Epsilon& eps,
                                  const Catalog& catalog, Rng& rng);

struct Triplet {
  int a_id = 0;
  int b_id = 0;
  Utterance utterance;
  world::Split split = world::Split::Train;
};

struct TripletDataset {
  std::vector<Triplet> items;

  std::vector<const Triplet*> in_split(world::Split s) const;
  std::size_t count(world::Split s) const;
};

struct PairsPerSplit {
  int train = 800;
  int val = 100;
  int test = 100;
  int for_split(world::Split s) const;
};

/// Draws distinct unordered pairs within each split (random orientation) and
/// emits one triplet per qualifying feature.
TripletDataset build_triplets(const world::TrajectoryPool& pool, const Catalog& catalog, const Epsilon& eps,
                              const PairsPerSplit& pairs, std::uint64_t seed);

}  // namespace langpref::lang
