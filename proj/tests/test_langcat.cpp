#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "langpref/langcat.hpp"

using namespace langpref;
using namespace langpref::lang;
using world::FeatureVector;
using world::Split;

namespace {

bool contains_text(const Catalog& c, int feature, int dir, const std::string& text) {
  for (int i : c.indices(feature, dir)) {
    if (c.at(i).text == text) return true;
  }
  return false;
}

world::TrajectoryPool split_pool(int count, std::uint64_t seed) {
  world::TrajectoryPool pool = world::generate_pool(world::WorldConfig{}, count, seed);
  world::split(pool, world::SplitRatios{}, seed);
  return pool;
}

}  // namespace

TEST_CASE("catalog: size, paraphrase counts and adapted entries") {
  const Catalog c = Catalog::builtin();
  CHECK(c.size() >= 48);
  for (int d = 0; d < world::kFeatureCount; ++d) {
    for (int dir : {-1, 1}) CHECK(c.indices(d, dir).size() >= 6);
  }
  CHECK(contains_text(c, static_cast<int>(world::Feature::Speed), 1, "Move faster."));
  CHECK(contains_text(c, static_cast<int>(world::Feature::Success), 1, "Pick up the spoon better."));
  CHECK(contains_text(c, static_cast<int>(world::Feature::PanDistance), 1, "Move farther from the pan."));
}

TEST_CASE("catalog: every utterance maps back to exactly one (feature, direction)") {
  const Catalog c = Catalog::builtin();
  std::map<std::string, std::set<int>> classes;
  for (const Utterance& u : c.utterances()) classes[u.text].insert(utterance_class(u.feature, u.direction));
  for (const auto& [text, cls] : classes) CHECK_MESSAGE(cls.size() == 1, text);
  int listed = 0;
  for (int d = 0; d < world::kFeatureCount; ++d) {
    for (int dir : {-1, 1}) {
      for (int i : c.indices(d, dir)) {
        CHECK(c.at(i).feature == d);
        CHECK(c.at(i).direction == dir);
        ++listed;
      }
    }
  }
  CHECK(listed == c.size());
}

TEST_CASE("tokenize: normalization, unknown words and empty input") {
  const Catalog c = Catalog::builtin();
  const Vocabulary& v = c.vocabulary();
  const std::vector<int> expected{v.index_of("move"), v.index_of("faster")};
  CHECK(tokenize("Move faster.", v) == expected);
  CHECK(tokenize("MOVE FASTER", v) == tokenize("move faster.", v));
  const auto z = tokenize("zoom faster", v);
  CHECK(std::find(z.begin(), z.end(), Vocabulary::kUnknown) != z.end());
  CHECK_THROWS(tokenize("", v));
  CHECK_THROWS(tokenize(" ?! ", v));
}

TEST_CASE("catalog: imported paraphrases extend the vocabulary") {
  Catalog c = Catalog::builtin();
  const int before = c.size();
  c.import_paraphrases({{static_cast<int>(world::Feature::Speed), 1, {"Zoom along briskly."}}});
  CHECK(c.size() == before + 1);
  const auto toks = tokenize("zoom along briskly", c.vocabulary());
  CHECK(std::find(toks.begin(), toks.end(), Vocabulary::kUnknown) == toks.end());
  CHECK_THROWS(c.import_paraphrases({{7, 1, {"bad feature"}}}));
}

TEST_CASE("label_pair: identical features give nothing, a single large change gives one utterance") {
  const Catalog c = Catalog::builtin();
  const Epsilon eps{0.05, 0.05, 0.05, 0.05};
  Rng rng = make_rng(1);
  const FeatureVector a(0.5, 0.2, 0.4, 0.3);
  CHECK(label_pair(a, a, eps, c, rng).empty());

  FeatureVector b = a;
  b[1] += 2 * eps[1];
  b[0] += 0.5 * eps[0];
  const auto out = label_pair(a, b, eps, c, rng);
  REQUIRE(out.size() == 1);
  CHECK(out[0].feature == static_cast<int>(world::Feature::Speed));
  CHECK(out[0].direction == 1);
}

TEST_CASE("label_pair: directions equal independently recomputed delta signs; swapping flips them") {
  const Catalog c = Catalog::builtin();
  const Epsilon eps{0.05, 0.02, 0.04, 0.1};
  Rng rng = make_rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const FeatureVector a(u(rng), u(rng), u(rng), u(rng));
    const FeatureVector b(u(rng), u(rng), u(rng), u(rng));
    const auto fwd = label_pair(a, b, eps, c, rng);
    const auto bwd = label_pair(b, a, eps, c, rng);
    std::map<int, int> expected;
    for (int d = 0; d < 4; ++d) {
      const double delta = b[d] - a[d];
      if (delta > eps[static_cast<std::size_t>(d)]) expected[d] = 1;
      if (delta < -eps[static_cast<std::size_t>(d)]) expected[d] = -1;
    }
    REQUIRE(fwd.size() == expected.size());
    REQUIRE(bwd.size() == expected.size());
    for (std::size_t k = 0; k < fwd.size(); ++k) {
      CHECK(fwd[k].direction == expected.at(fwd[k].feature));
      CHECK(bwd[k].feature == fwd[k].feature);
      CHECK(bwd[k].direction == -fwd[k].direction);
    }
  }
}

TEST_CASE("build_triplets: a two-trajectory split differing only in height") {
  world::TrajectoryPool pool;
  for (int i = 0; i < 2; ++i) {
    world::PoolItem it;
    it.trajectory.id = i;
    it.features = FeatureVector(0.2 + 0.5 * i, 0.3, 0.4, 0.5);
    it.split = Split::Train;
    pool.items.push_back(it);
  }
  const Catalog c = Catalog::builtin();
  const TripletDataset ds = build_triplets(pool, c, Epsilon{0.01, 0.01, 0.01, 0.01}, PairsPerSplit{1, 0, 0}, 5);
  REQUIRE(ds.items.size() == 1);
  CHECK(ds.items[0].utterance.feature == static_cast<int>(world::Feature::Height));
  CHECK_THROWS_WITH(build_triplets(pool, c, Epsilon{0.01, 0.01, 0.01, 0.01}, PairsPerSplit{2, 0, 0}, 5),
                    doctest::Contains("train"));
  CHECK_THROWS_WITH(build_triplets(pool, c, Epsilon{0.01, 0.01, 0.01, 0.01}, PairsPerSplit{1, 1, 0}, 5),
                    doctest::Contains("val"));
}

TEST_CASE("build_triplets: determinism, split membership, counts and label soundness") {
  const world::TrajectoryPool pool = split_pool(160, 21);
  const Catalog c = Catalog::builtin();
  const Epsilon eps = default_epsilon(pool);
  const PairsPerSplit pairs{200, 30, 30};
  const TripletDataset ds = build_triplets(pool, c, eps, pairs, 8);
  const TripletDataset again = build_triplets(pool, c, eps, pairs, 8);
  REQUIRE(ds.items.size() == again.items.size());
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    CHECK(ds.items[i].a_id == again.items[i].a_id);
    CHECK(ds.items[i].b_id == again.items[i].b_id);
    CHECK(ds.items[i].utterance.text == again.items[i].utterance.text);
  }

  std::map<std::pair<int, int>, int> per_pair;
  for (const Triplet& t : ds.items) {
    CHECK(t.a_id != t.b_id);
    const auto& a = pool.by_id(t.a_id);
    const auto& b = pool.by_id(t.b_id);
    CHECK(a.split == t.split);
    CHECK(b.split == t.split);
    // Soundness from raw states, not stored features.
    const FeatureVector fa = world::features(a.trajectory, pool.config);
    const FeatureVector fb = world::features(b.trajectory, pool.config);
    const int d = t.utterance.feature;
    CHECK(t.utterance.direction * (fb[d] - fa[d]) > eps[static_cast<std::size_t>(d)]);
    per_pair[{t.a_id, t.b_id}]++;
  }
  // Brute-force count of qualifying features per emitted pair.
  for (const auto& [key, n] : per_pair) {
    const auto& a = pool.by_id(key.first).features;
    const auto& b = pool.by_id(key.second).features;
    int q = 0;
    for (int d = 0; d < 4; ++d) q += std::abs(b[d] - a[d]) > eps[static_cast<std::size_t>(d)] ? 1 : 0;
    CHECK(n == q);
  }
  CHECK(per_pair.size() <= static_cast<std::size_t>(pairs.train + pairs.val + pairs.test));

  // Catalog closure: every dataset utterance tokenizes without unknowns.
  for (const Triplet& t : ds.items) {
    const auto toks = tokenize(t.utterance.text, c.vocabulary());
    CHECK(std::count(toks.begin(), toks.end(), Vocabulary::kUnknown) == 0);
  }
}
