#include "langpref/langcat.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <stdexcept>

namespace langpref::lang {

using world::Feature;
using world::Split;

namespace {

int fid(Feature f) { return static_cast<int>(f); }

std::vector<CatalogEntry> builtin_entries() {
  return {
      {fid(Feature::Height), +1,
       {"Move higher.", "Move taller.", "Move at a greater height.", "Move to a greater height.", "Go higher up.",
        "Move your gripper higher.", "Increase the overall height of the trajectory."}},
      {fid(Feature::Height), -1,
       {"Move lower.", "Move shorter.", "Move at a lesser height.", "Move to a lower height.", "Go lower down.",
        "Move your gripper lower.", "Decrease the overall height of the trajectory."}},
      {fid(Feature::Speed), +1,
       {"Move faster.", "Move quicker.", "Move swifter.", "Move at a higher speed.", "Move more quickly.",
        "Increase the pace.", "Increase your velocity."}},
      {fid(Feature::Speed), -1,
       {"Move slower.", "Move at a lower speed.", "Move more moderate.", "Move more sluggish.", "Move more slowly.",
        "Decrease the pace.", "Decrease your velocity."}},
      {fid(Feature::PanDistance), +1,
       {"Move farther from the pan.", "Move further from the pan.", "Move more distant from the pan.",
        "Stay farther from the pan.", "Keep a larger distance from the pan.", "Avoid the pan better.",
        "Give wider berth to the pan."}},
      {fid(Feature::PanDistance), -1,
       {"Move closer to the pan.", "Move nearer to the pan.", "Move more nearby to the pan.",
        "Stay closer to the pan.", "Keep a smaller distance to the pan.", "Get closer to the pan."}},
      {fid(Feature::Success), +1,
       {"Pick up the spoon better.", "Pick up the spoon more successfully.", "Pick up the spoon more effectively.",
        "Be more adept at picking up the spoon.", "Grab the spoon better.", "Get the spoon more reliably."}},
      {fid(Feature::Success), -1,
       {"Pick up the spoon worse.", "Pick up the spoon not as well.", "Pick up the spoon less successfully.",
        "Pick up the spoon less effectively.", "Grab the spoon worse.", "Be less adept at picking up the spoon."}},
  };
}

void check_entry(const CatalogEntry& e) {
  if (e.feature < 0 || e.feature >= world::kFeatureCount) {
    throw std::invalid_argument("catalog entry has feature id " + std::to_string(e.feature));
  }
  if (e.direction != 1 && e.direction != -1) throw std::invalid_argument("catalog direction must be +1 or -1");
  for (const std::string& t : e.texts) {
    if (normalize_words(t).empty()) throw std::invalid_argument("catalog text has no words: '" + t + "'");
  }
}

}  // namespace

std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      if (!cur.empty()) words.push_back(std::move(cur));
      cur.clear();
    } else if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocabulary::Vocabulary() {
  words_.push_back("<unk>");
  index_.emplace("<unk>", kUnknown);
}

int Vocabulary::add(const std::string& word) {
  auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  const int idx = static_cast<int>(words_.size());
  words_.push_back(word);
  index_.emplace(word, idx);
  return idx;
}

int Vocabulary::index_of(const std::string& word) const {
  auto it = index_.find(word);
  return it == index_.end() ? kUnknown : it->second;
}

std::vector<int> tokenize(std::string_view text, const Vocabulary& vocab) {
  const std::vector<std::string> words = normalize_words(text);
  if (words.empty()) throw std::invalid_argument("cannot tokenize empty text");
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const std::string& w : words) ids.push_back(vocab.index_of(w));
  return ids;
}

Catalog Catalog::builtin() { return from_entries(builtin_entries()); }

Catalog Catalog::from_entries(std::vector<CatalogEntry> entries) {
  for (const CatalogEntry& e : entries) check_entry(e);
  Catalog c;
  c.entries_ = std::move(entries);
  c.rebuild();
  return c;
}

void Catalog::import_paraphrases(const std::vector<CatalogEntry>& extra) {
  for (const CatalogEntry& e : extra) {
    check_entry(e);
    auto it = std::find_if(entries_.begin(), entries_.end(),
                           [&](const CatalogEntry& x) { return x.feature == e.feature && x.direction == e.direction; });
    if (it == entries_.end()) {
      entries_.push_back(e);
    } else {
      for (const std::string& t : e.texts) {
        if (std::find(it->texts.begin(), it->texts.end(), t) == it->texts.end()) it->texts.push_back(t);
      }
    }
  }
  rebuild();
}

void Catalog::rebuild() {
  vocab_ = Vocabulary();
  utterances_.clear();
  by_class_.clear();
  for (const CatalogEntry& e : entries_) {
    for (const std::string& t : e.texts) {
      for (const std::string& w : normalize_words(t)) vocab_.add(w);
    }
  }
  for (const CatalogEntry& e : entries_) {
    for (const std::string& t : e.texts) {
      Utterance u;
      u.feature = e.feature;
      u.direction = e.direction;
      u.text = t;
      u.tokens = tokenize(t, vocab_);
      u.catalog_index = static_cast<int>(utterances_.size());
      by_class_[utterance_class(e.feature, e.direction)].push_back(u.catalog_index);
      utterances_.push_back(std::move(u));
    }
  }
}

std::span<const int> Catalog::indices(int feature, int direction) const {
  auto it = by_class_.find(utterance_class(feature, direction));
  if (it == by_class_.end()) return {};
  return it->second;
}

Epsilon default_epsilon(const world::TrajectoryPool& pool) {
  Epsilon eps{};
  const auto train = pool.in_split(Split::Train);
  if (train.empty()) throw std::invalid_argument("pool has no training trajectories");
  for (int d = 0; d < world::kFeatureCount; ++d) {
    double lo = train.front()->features[d], hi = lo;
    for (const world::PoolItem* it : train) {
      lo = std::min(lo, it->features[d]);
      hi = std::max(hi, it->features[d]);
    }
    eps[static_cast<std::size_t>(d)] = 0.1 * (hi - lo);
    if (!(eps[static_cast<std::size_t>(d)] > 0.0)) eps[static_cast<std::size_t>(d)] = 1e-9;
  }
  return eps;
}

std::vector<Utterance> label_pair(const world::FeatureVector& a, const world::FeatureVector& b, const Epsilon& eps,
                                  const Catalog& catalog, Rng& rng) {
  std::vector<Utterance> out;
  for (int d = 0; d < world::kFeatureCount; ++d) {
    const double e = eps[static_cast<std::size_t>(d)];
    if (!(e > 0.0)) throw std::invalid_argument("dead-band must be positive for every feature");
    const double delta = b[d] - a[d];
    if (std::abs(delta) <= e) continue;
    const int dir = delta > 0.0 ? 1 : -1;
    const auto idx = catalog.indices(d, dir);
    if (idx.empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, idx.size() - 1);
    out.push_back(catalog.at(idx[pick(rng)]));
  }
  return out;
}

std::vector<const Triplet*> TripletDataset::in_split(Split s) const {
  std::vector<const Triplet*> out;
  for (const Triplet& t : items) {
    if (t.split == s) out.push_back(&t);
  }
  return out;
}

std::size_t TripletDataset::count(Split s) const {
  return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [s](const Triplet& t) { return t.split == s; }));
}

int PairsPerSplit::for_split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  return 0;
}

TripletDataset build_triplets(const world::TrajectoryPool& pool, const Catalog& catalog, const Epsilon& eps,
                              const PairsPerSplit& pairs, std::uint64_t seed) {
  Rng rng = make_rng(seed, stream::kTriplets);
  TripletDataset ds;
  for (Split s : {Split::Train, Split::Val, Split::Test}) {
    const int wanted = pairs.for_split(s);
    if (wanted < 0) throw std::invalid_argument("pair counts must be nonnegative");
    if (wanted == 0) continue;
    const auto members = pool.in_split(s);
    const long n = static_cast<long>(members.size());
    const long available = n * (n - 1) / 2;
    if (available < wanted) {
      throw std::invalid_argument(std::string("split '") + world::split_name(s) + "' has " + std::to_string(n) +
                                  " trajectories, too few for " + std::to_string(wanted) + " distinct pairs");
    }
    std::uniform_int_distribution<long> pick(0, n - 1);
    std::bernoulli_distribution flip(0.5);
    std::set<std::pair<long, long>> seen;
    while (static_cast<int>(seen.size()) < wanted) {
      long i = pick(rng), j = pick(rng);
      if (i == j) continue;
      if (!seen.emplace(std::min(i, j), std::max(i, j)).second) continue;
      if (flip(rng)) std::swap(i, j);
      const world::PoolItem& a = *members[static_cast<std::size_t>(i)];
      const world::PoolItem& b = *members[static_cast<std::size_t>(j)];
      for (Utterance& u : label_pair(a.features, b.features, eps, catalog, rng)) {
        ds.items.push_back(Triplet{a.trajectory.id, b.trajectory.id, std::move(u), s});
      }
    }
  }
  return ds;
}

}  // namespace langpref::lang
