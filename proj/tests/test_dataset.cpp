#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "blindrep/dataset.hpp"

using namespace blindrep;

namespace {

GenConfig small_config() {
  GenConfig cfg;
  cfg.num_identities = 24;
  cfg.embedding_dim = 96;
  cfg.identity_dim = 16;
  cfg.emotion_dim = 8;
  cfg.seed = 5;
  return cfg;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("generate: default layout gives 1440 samples with all six emotions per identity") {
  GenConfig cfg;  // defaults: 240 identities, 6 images each
  const Dataset ds = generate_dataset(cfg);
  REQUIRE(ds.size() == 1440);
  std::map<int, std::set<int>> emotions;
  std::map<int, size_t> counts;
  for (const LabeledSample& s : ds.samples) {
    emotions[s.identity].insert(s.emotion);
    counts[s.identity] += 1;
  }
  REQUIRE(emotions.size() == 240);
  for (const auto& [id, set] : emotions) {
    CHECK(set.size() == 6);
    CHECK(counts[id] == 6);
  }
}

TEST_CASE("generate: label marginals are exactly one sixth per emotion") {
  const Dataset ds = generate_dataset(small_config());
  std::map<int, size_t> per_emotion;
  for (const LabeledSample& s : ds.samples) per_emotion[s.emotion] += 1;
  for (int e = 0; e < kNumEmotions; ++e) CHECK(per_emotion[e] == ds.size() / 6);
}

TEST_CASE("generate: identical seed gives identical datasets") {
  const Dataset a = generate_dataset(small_config());
  const Dataset b = generate_dataset(small_config());
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a.samples[i].embedding == b.samples[i].embedding);
    CHECK(a.samples[i].smiling == b.samples[i].smiling);
  }
}

TEST_CASE("generate: deterministic factors give identical embeddings without noise") {
  GenConfig cfg = small_config();
  cfg.noise_sigma = 0.0;
  cfg.emotion_jitter = 0.0;
  cfg.images_per_identity = 12;  // each emotion appears twice per identity
  const Dataset ds = generate_dataset(cfg);
  size_t compared = 0;
  for (size_t i = 0; i + 6 < ds.size(); ++i) {
    const LabeledSample& a = ds.samples[i];
    const LabeledSample& b = ds.samples[i + 6];
    if (a.identity == b.identity && a.emotion == b.emotion && a.smiling == b.smiling) {
      CHECK(a.embedding == b.embedding);
      ++compared;
    }
  }
  REQUIRE(compared > 0);
}

TEST_CASE("generate: orthogonal mixing preserves latent distances") {
  GenConfig cfg = small_config();
  cfg.noise_sigma = 0.0;
  const GeneratedData gen = generate_dataset_detailed(cfg);
  for (size_t i = 0; i < 20; ++i) {
    const size_t a = i, b = gen.dataset.size() - 1 - i;
    const double emb = std::sqrt(squared_distance(gen.dataset.samples[a].embedding,
                                                  gen.dataset.samples[b].embedding));
    const double lat =
        std::sqrt(squared_distance(gen.latents.row_span(a), gen.latents.row_span(b)));
    CHECK(emb == Catch::Approx(lat).margin(1e-9));
  }
}

TEST_CASE("generate: emotion centroids separate well beyond the noise level") {
  GenConfig cfg;  // default scales
  cfg.num_identities = 60;
  const Dataset ds = generate_dataset(cfg);
  std::vector<std::vector<double>> centroid(kNumEmotions,
                                            std::vector<double>(ds.dim(), 0.0));
  std::vector<size_t> counts(kNumEmotions, 0);
  for (const LabeledSample& s : ds.samples) {
    for (int j = 0; j < ds.dim(); ++j) centroid[s.emotion][j] += s.embedding[j];
    counts[s.emotion] += 1;
  }
  for (int e = 0; e < kNumEmotions; ++e) {
    for (double& v : centroid[e]) v /= static_cast<double>(counts[e]);
  }
  for (int a = 0; a < kNumEmotions; ++a) {
    for (int b = a + 1; b < kNumEmotions; ++b) {
      const double dist = std::sqrt(squared_distance(centroid[a], centroid[b]));
      CHECK(dist > 4.0 * cfg.noise_sigma);
    }
  }
}

TEST_CASE("generate: config violations are rejected") {
  GenConfig cfg = small_config();
  cfg.embedding_dim = 20;  // below identity_dim + emotion_dim + 4
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
  cfg = small_config();
  cfg.gender_scale = 0.0;
  CHECK_THROWS_AS(generate_dataset(cfg), ConfigError);
}

TEST_CASE("split: identity-disjoint 80/20 over 100 identities") {
  GenConfig cfg = small_config();
  cfg.num_identities = 100;
  const Dataset ds = generate_dataset(cfg);
  const DatasetSplits splits = split_by_identity(ds, {0.8, 0.0, 0.2}, 3);
  auto ids = [](const Dataset& d) {
    std::set<int> out;
    for (const LabeledSample& s : d.samples) out.insert(s.identity);
    return out;
  };
  const auto train_ids = ids(splits.train);
  const auto test_ids = ids(splits.test);
  CHECK(train_ids.size() == 80);
  CHECK(test_ids.size() == 20);
  CHECK(splits.dev.samples.empty());
  for (int id : test_ids) CHECK(train_ids.count(id) == 0);
  CHECK(splits.train.size() + splits.test.size() == ds.size());
}

TEST_CASE("split: full-train split and determinism") {
  const Dataset ds = generate_dataset(small_config());
  const DatasetSplits full = split_by_identity(ds, {1.0, 0.0, 0.0}, 3);
  CHECK(full.train.size() == ds.size());
  const DatasetSplits a = split_by_identity(ds, {0.6, 0.2, 0.2}, 17);
  const DatasetSplits b = split_by_identity(ds, {0.6, 0.2, 0.2}, 17);
  REQUIRE(a.train.size() == b.train.size());
  for (size_t i = 0; i < a.train.size(); ++i) {
    CHECK(a.train.samples[i].identity == b.train.samples[i].identity);
  }
}

TEST_CASE("split: bad fractions are config errors") {
  const Dataset ds = generate_dataset(small_config());
  CHECK_THROWS_AS(split_by_identity(ds, {0.5, 0.0, 0.4}, 3), ConfigError);
  // a positive fraction that rounds to zero identities
  CHECK_THROWS_AS(split_by_identity(ds, {0.99, 0.005, 0.005}, 3), ConfigError);
}

TEST_CASE("split: sample-level mode keeps counts but may share identities") {
  const Dataset ds = generate_dataset(small_config());
  const DatasetSplits splits =
      split_by_identity(ds, {0.75, 0.0, 0.25}, 11, SplitMode::kSampleLevel);
  CHECK(splits.train.size() == ds.size() * 3 / 4);
  CHECK(splits.train.size() + splits.test.size() == ds.size());
}

TEST_CASE("triplets: count zero gives an empty list") {
  const Dataset ds = generate_dataset(small_config());
  CHECK(sample_triplets(ds, 0, 1).empty());
}

TEST_CASE("triplets: emitted triplets satisfy every invariant") {
  GenConfig cfg = small_config();
  cfg.num_identities = 2;
  cfg.images_per_identity = 2;
  const Dataset ds = generate_dataset(cfg);
  const auto triplets = sample_triplets(ds, 8, 7);
  REQUIRE(triplets.size() == 8);
  for (const Triplet& t : triplets) {
    CHECK(t.anchor != t.positive);
    CHECK(ds.samples[t.anchor].identity == ds.samples[t.positive].identity);
    CHECK(ds.samples[t.anchor].identity != ds.samples[t.negative].identity);
  }
}

TEST_CASE("triplets: single-identity data is a data error") {
  GenConfig cfg = small_config();
  cfg.num_identities = 1;
  const Dataset ds = generate_dataset(cfg);
  CHECK_THROWS_AS(sample_triplets(ds, 4, 1), DataError);
}

TEST_CASE("pairs: balanced 50/50 with valid labels and no degenerate pairs") {
  const Dataset ds = generate_dataset(small_config());
  const auto pairs = build_verification_pairs(ds, 100, 13);
  REQUIRE(pairs.size() == 100);
  size_t genuine = 0;
  for (const VerificationPair& p : pairs) {
    CHECK(p.a != p.b);
    CHECK(p.same_identity == (ds.samples[p.a].identity == ds.samples[p.b].identity));
    if (p.same_identity) ++genuine;
  }
  CHECK(genuine == 50);

  const auto again = build_verification_pairs(ds, 100, 13);
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(pairs[i].a == again[i].a);
    CHECK(pairs[i].b == again[i].b);
  }
}

TEST_CASE("pairs: insufficient identities is a data error") {
  GenConfig cfg = small_config();
  cfg.num_identities = 1;
  const Dataset ds = generate_dataset(cfg);
  CHECK_THROWS_AS(build_verification_pairs(ds, 10, 1), DataError);
}

TEST_CASE("dataset io: round trip reproduces labels exactly and embeddings closely") {
  const Dataset ds = generate_dataset(small_config());
  const std::string path = temp_path("blindrep_ds_roundtrip.txt");
  write_dataset(ds, path);
  const Dataset back = read_dataset(path);
  REQUIRE(back.size() == ds.size());
  for (size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.samples[i].identity == ds.samples[i].identity);
    CHECK(back.samples[i].emotion == ds.samples[i].emotion);
    CHECK(back.samples[i].gender == ds.samples[i].gender);
    CHECK(back.samples[i].ethnicity == ds.samples[i].ethnicity);
    CHECK(back.samples[i].attractive == ds.samples[i].attractive);
    CHECK(back.samples[i].smiling == ds.samples[i].smiling);
    for (int j = 0; j < ds.dim(); ++j) {
      CHECK(std::abs(back.samples[i].embedding[static_cast<size_t>(j)] -
                     ds.samples[i].embedding[static_cast<size_t>(j)]) < 1e-9);
    }
  }
  std::filesystem::remove(path);
}

TEST_CASE("dataset io: wrong arity names the offending line") {
  const Dataset ds = generate_dataset(small_config());
  const std::string path = temp_path("blindrep_ds_badline.txt");
  write_dataset(ds, path);
  // Append one junk token to line 7 (header + 6 samples precede it).
  std::ifstream in(path);
  std::string text, rebuilt;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (line == 7) text += " 0.25";
    rebuilt += text + "\n";
  }
  in.close();
  std::ofstream(path) << rebuilt;
  CHECK_THROWS_MATCHES(read_dataset(path), ParseError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("line 7")));
  std::filesystem::remove(path);
}

TEST_CASE("dataset io: external high-dimension files are accepted") {
  // A hand-built file with N = 2048, the footprint of a real backbone.
  const std::string path = temp_path("blindrep_ds_wide.txt");
  {
    std::ofstream os(path);
    os << "N=2048 tasks=" << kDatasetTaskList << "\n";
    Rng rng(3);
    for (int i = 0; i < 4; ++i) {
      os << i / 2 << " " << i % 6 << " 0 1 0 1";
      for (int j = 0; j < 2048; ++j) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " %.6f", rng.normal());
        os << buf;
      }
      os << "\n";
    }
  }
  const Dataset ds = read_dataset(path);
  CHECK(ds.dim() == 2048);
  CHECK(ds.size() == 4);
  std::filesystem::remove(path);
}

TEST_CASE("dataset io: out-of-range labels are parse errors") {
  const std::string path = temp_path("blindrep_ds_badlabel.txt");
  {
    std::ofstream os(path);
    os << "N=2 tasks=" << kDatasetTaskList << "\n";
    os << "0 9 0 0 0 0 1.0 2.0\n";  // emotion 9 out of range
  }
  CHECK_THROWS_MATCHES(read_dataset(path), ParseError,
                       Catch::Matchers::MessageMatches(
                           Catch::Matchers::ContainsSubstring("line 2")));
  std::filesystem::remove(path);
}
