#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "blindrep/errors.hpp"
#include "blindrep/matrix.hpp"
#include "blindrep/net.hpp"
#include "blindrep/rng.hpp"

namespace blindrep {

// Emotion class order is fixed across the project.
inline constexpr int kNumEmotions = 6;
inline constexpr int kEmotionNeutral = 0;
inline constexpr int kEmotionHappy = 1;
inline constexpr std::array<const char*, kNumEmotions> kEmotionNames = {
    "neutral", "happy", "sad", "disgusted", "angry", "surprised"};

struct LabeledSample {
  std::vector<double> embedding;
  int identity = 0;
  int emotion = 0;
  int gender = 0;      // {0, 1}
  int ethnicity = 0;   // {0, 1, 2}
  int attractive = 0;  // {0, 1}
  int smiling = 0;     // {0, 1}
};

struct TaskSpec {
  int k = 0;  // 0 identity, 1 gender, 2 ethnicity, 3 emotion, 4 attractive, 5 smiling
  std::string name;
  int num_classes = 2;
};

struct Dataset {
  std::vector<LabeledSample> samples;
  std::string provenance;
  uint64_t mixing_seed = 0;

  size_t size() const { return samples.size(); }
  int dim() const { return samples.empty() ? 0 : static_cast<int>(samples[0].embedding.size()); }
};

namespace tasks {
inline TaskSpec gender() { return {1, "gender", 2}; }
inline TaskSpec ethnicity() { return {2, "ethnicity", 3}; }
inline TaskSpec emotion() { return {3, "emotion", kNumEmotions}; }
inline TaskSpec attractive() { return {4, "attractive", 2}; }
inline TaskSpec smiling() { return {5, "smiling", 2}; }

// Closed-set identity classification over the identities present.
inline TaskSpec identity(const Dataset& ds) {
  int max_id = -1;
  for (const LabeledSample& s : ds.samples) max_id = std::max(max_id, s.identity);
  return {0, "identity", max_id + 1};
}
}  // namespace tasks

inline int label_of(const LabeledSample& s, const TaskSpec& task) {
  switch (task.k) {
    case 0: return s.identity;
    case 1: return s.gender;
    case 2: return s.ethnicity;
    case 3: return s.emotion;
    case 4: return s.attractive;
    case 5: return s.smiling;
    default: throw ArgumentError("label_of: unknown task tag " + std::to_string(task.k));
  }
}

inline Matrix embeddings_of(const Dataset& ds) {
  Matrix x(ds.size(), static_cast<size_t>(ds.dim()));
  for (size_t i = 0; i < ds.size(); ++i) {
    const auto& e = ds.samples[i].embedding;
    std::copy(e.begin(), e.end(), x.row(i));
  }
  return x;
}

inline std::vector<int> labels_of(const Dataset& ds, const TaskSpec& task) {
  std::vector<int> y(ds.size());
  for (size_t i = 0; i < ds.size(); ++i) y[i] = label_of(ds.samples[i], task);
  return y;
}

// Synthetic generator settings. The latent vector concatenates an identity
// code, an emotion block and one signed coordinate per binary/ternary
// attribute; a seeded orthogonal mixing matrix then spreads every factor
// across all embedding coordinates.
struct GenConfig {
  int num_identities = 240;
  int images_per_identity = 6;  // one per emotion when 6
  int embedding_dim = 256;      // N
  int identity_dim = 64;
  int emotion_dim = 8;
  double identity_scale = 0.3;
  double emotion_scale = 1.0;
  double emotion_jitter = 0.1;
  double gender_scale = 1.0;
  double ethnicity_scale = 1.0;
  double attractive_scale = 0.05;
  double smiling_scale = 1.0;
  double smile_happy_corr = 0.6;  // mixing weight toward the Happy indicator
  double noise_sigma = 0.05;
  uint64_t seed = 1;

  int latent_dim() const { return identity_dim + emotion_dim + 4; }

  void validate() const {
    if (num_identities < 1) throw ConfigError("gen config: num_identities must be >= 1");
    if (images_per_identity < 1) throw ConfigError("gen config: images_per_identity must be >= 1");
    if (embedding_dim < latent_dim()) {
      throw ConfigError("gen config: embedding_dim " + std::to_string(embedding_dim) +
                        " must be >= identity_dim + emotion_dim + 4 = " +
                        std::to_string(latent_dim()));
    }
    if (emotion_dim < kNumEmotions) {
      throw ConfigError("gen config: emotion_dim must be >= " + std::to_string(kNumEmotions));
    }
    for (double s : {identity_scale, emotion_scale, gender_scale, ethnicity_scale,
                     attractive_scale, smiling_scale}) {
      if (!(s > 0.0)) throw ConfigError("gen config: attribute scales must be > 0");
    }
    if (emotion_jitter < 0.0) throw ConfigError("gen config: emotion_jitter must be >= 0");
    if (noise_sigma < 0.0) throw ConfigError("gen config: noise_sigma must be >= 0");
    if (smile_happy_corr < 0.0 || smile_happy_corr > 1.0) {
      throw ConfigError("gen config: smile_happy_corr must be in [0, 1]");
    }
  }
};

struct GeneratedData {
  Dataset dataset;
  Matrix latents;  // samples x latent_dim
  Matrix mixing;   // embedding_dim x latent_dim, orthonormal columns
};

namespace detail {

// Orthonormal columns via modified Gram-Schmidt of a Gaussian draw, with one
// re-orthogonalization pass.
inline Matrix random_orthogonal_columns(size_t rows, size_t cols, Rng& rng) {
  Matrix q(rows, cols);
  for (double& v : q.data()) v = rng.normal();
  for (size_t c = 0; c < cols; ++c) {
    for (int pass = 0; pass < 2; ++pass) {
      for (size_t prev = 0; prev < c; ++prev) {
        double proj = 0.0;
        for (size_t r = 0; r < rows; ++r) proj += q(r, c) * q(r, prev);
        for (size_t r = 0; r < rows; ++r) q(r, c) -= proj * q(r, prev);
      }
    }
    double norm = 0.0;
    for (size_t r = 0; r < rows; ++r) norm += q(r, c) * q(r, c);
    norm = std::sqrt(norm);
    if (norm < 1e-12) throw NumericError("random_orthogonal_columns: degenerate column");
    for (size_t r = 0; r < rows; ++r) q(r, c) /= norm;
  }
  return q;
}

// Exact quotas over `classes`, order randomized.
inline std::vector<int> balanced_assignment(int count, int classes, Rng& rng) {
  std::vector<int> v(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) v[static_cast<size_t>(i)] = i % classes;
  rng.shuffle(v);
  return v;
}

}  // namespace detail

inline GeneratedData generate_dataset_detailed(const GenConfig& cfg) {
  cfg.validate();
  const size_t n_dim = static_cast<size_t>(cfg.embedding_dim);
  const size_t d = static_cast<size_t>(cfg.latent_dim());
  const size_t id_dim = static_cast<size_t>(cfg.identity_dim);
  const size_t emo_dim = static_cast<size_t>(cfg.emotion_dim);
  const size_t gender_at = id_dim + emo_dim;
  const size_t ethnicity_at = gender_at + 1;
  const size_t attractive_at = gender_at + 2;
  const size_t smiling_at = gender_at + 3;

  Rng mix_rng(sub_seed(cfg.seed, 1));
  Rng quota_rng(sub_seed(cfg.seed, 2));
  Rng sample_rng(sub_seed(cfg.seed, 3));

  GeneratedData out;
  out.mixing = detail::random_orthogonal_columns(n_dim, d, mix_rng);

  const std::vector<int> genders = detail::balanced_assignment(cfg.num_identities, 2, quota_rng);
  const std::vector<int> ethnicities =
      detail::balanced_assignment(cfg.num_identities, 3, quota_rng);
  const std::vector<int> attractives =
      detail::balanced_assignment(cfg.num_identities, 2, quota_rng);

  const size_t total =
      static_cast<size_t>(cfg.num_identities) * static_cast<size_t>(cfg.images_per_identity);
  out.latents = Matrix(total, d);
  out.dataset.samples.reserve(total);
  out.dataset.mixing_seed = cfg.seed;
  out.dataset.provenance = "synthetic seed=" + std::to_string(cfg.seed) +
                           " identities=" + std::to_string(cfg.num_identities) +
                           " images_per_identity=" + std::to_string(cfg.images_per_identity) +
                           " N=" + std::to_string(cfg.embedding_dim);

  std::vector<double> identity_code(id_dim);
  size_t row = 0;
  for (int id = 0; id < cfg.num_identities; ++id) {
    for (double& v : identity_code) v = cfg.identity_scale * sample_rng.normal();
    for (int img = 0; img < cfg.images_per_identity; ++img) {
      const int emotion = img % kNumEmotions;
      LabeledSample s;
      s.identity = id;
      s.emotion = emotion;
      s.gender = genders[static_cast<size_t>(id)];
      s.ethnicity = ethnicities[static_cast<size_t>(id)];
      s.attractive = attractives[static_cast<size_t>(id)];

      double* lat = out.latents.row(row);
      for (size_t k = 0; k < id_dim; ++k) lat[k] = identity_code[k];
      // Emotion prototype: scaled basis vector of the emotion block plus jitter.
      for (size_t k = 0; k < emo_dim; ++k) {
        lat[id_dim + k] = cfg.emotion_jitter * sample_rng.normal();
      }
      lat[id_dim + static_cast<size_t>(emotion)] += cfg.emotion_scale;

      // Smiling mixes the Happy indicator with a fair coin. Both draws happen
      // unconditionally so the stream layout does not depend on their values.
      const bool use_happy = sample_rng.uniform() < cfg.smile_happy_corr;
      const bool coin = sample_rng.coin();
      s.smiling = use_happy ? (emotion == kEmotionHappy ? 1 : 0) : (coin ? 1 : 0);

      lat[gender_at] = s.gender ? cfg.gender_scale : -cfg.gender_scale;
      lat[ethnicity_at] = (s.ethnicity - 1) * cfg.ethnicity_scale;
      lat[attractive_at] = s.attractive ? cfg.attractive_scale : -cfg.attractive_scale;
      lat[smiling_at] = s.smiling ? cfg.smiling_scale : -cfg.smiling_scale;

      s.embedding.assign(n_dim, 0.0);
      for (size_t j = 0; j < n_dim; ++j) {
        const double* qrow = out.mixing.row(j);
        double acc = 0.0;
        for (size_t k = 0; k < d; ++k) acc += qrow[k] * lat[k];
        s.embedding[j] = acc;
      }
      for (size_t j = 0; j < n_dim; ++j) {
        s.embedding[j] += cfg.noise_sigma * sample_rng.normal();
      }
      out.dataset.samples.push_back(std::move(s));
      ++row;
    }
  }
  return out;
}

inline Dataset generate_dataset(const GenConfig& cfg) {
  return generate_dataset_detailed(cfg).dataset;
}

enum class SplitMode { kIdentityDisjoint, kSampleLevel };

struct DatasetSplits {
  Dataset train, dev, test;
};

inline DatasetSplits split_by_identity(const Dataset& ds, std::array<double, 3> fractions,
                                       uint64_t seed,
                                       SplitMode mode = SplitMode::kIdentityDisjoint) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("split: fractions sum to " + std::to_string(sum) + ", expected 1");
  }
  for (double f : fractions) {
    if (f < 0.0) throw ConfigError("split: fractions must be non-negative");
  }
  if (ds.samples.empty()) throw DataError("split: empty dataset");

  Rng rng(seed);
  std::vector<int> assignment(ds.size(), 0);  // 0 train, 1 dev, 2 test

  auto cut = [&](size_t count) -> std::array<size_t, 3> {
    const auto b1 = static_cast<size_t>(std::llround(fractions[0] * static_cast<double>(count)));
    const auto b2 = static_cast<size_t>(
        std::llround((fractions[0] + fractions[1]) * static_cast<double>(count)));
    std::array<size_t, 3> counts = {b1, b2 - b1, count - b2};
    for (size_t i = 0; i < 3; ++i) {
      if (fractions[i] > 0.0 && counts[i] == 0) {
        throw ConfigError("split: fraction " + std::to_string(fractions[i]) +
                          " yields an empty split for " + std::to_string(count) + " units");
      }
    }
    return counts;
  };

  if (mode == SplitMode::kIdentityDisjoint) {
    std::set<int> id_set;
    for (const LabeledSample& s : ds.samples) id_set.insert(s.identity);
    std::vector<int> ids(id_set.begin(), id_set.end());
    rng.shuffle(ids);
    const auto counts = cut(ids.size());
    std::map<int, int> where;
    size_t pos = 0;
    for (int part = 0; part < 3; ++part) {
      for (size_t k = 0; k < counts[static_cast<size_t>(part)]; ++k) where[ids[pos++]] = part;
    }
    for (size_t i = 0; i < ds.size(); ++i) assignment[i] = where[ds.samples[i].identity];
  } else {
    std::vector<size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    rng.shuffle(idx);
    const auto counts = cut(idx.size());
    size_t pos = 0;
    for (int part = 0; part < 3; ++part) {
      for (size_t k = 0; k < counts[static_cast<size_t>(part)]; ++k) assignment[idx[pos++]] = part;
    }
  }

  DatasetSplits splits;
  Dataset* parts[3] = {&splits.train, &splits.dev, &splits.test};
  for (Dataset* p : parts) {
    p->provenance = ds.provenance;
    p->mixing_seed = ds.mixing_seed;
  }
  for (size_t i = 0; i < ds.size(); ++i) {
    parts[assignment[i]]->samples.push_back(ds.samples[i]);
  }
  splits.train.provenance += " [train]";
  splits.dev.provenance += " [dev]";
  splits.test.provenance += " [test]";
  return splits;
}

// References into a dataset's sample vector.
struct Triplet {
  size_t anchor = 0;
  size_t positive = 0;
  size_t negative = 0;
};

struct VerificationPair {
  size_t a = 0;
  size_t b = 0;
  bool same_identity = false;
};

namespace detail {

inline std::vector<std::pair<int, std::vector<size_t>>> group_by_identity(const Dataset& ds) {
  std::map<int, std::vector<size_t>> groups;
  for (size_t i = 0; i < ds.size(); ++i) groups[ds.samples[i].identity].push_back(i);
  return {groups.begin(), groups.end()};
}

}  // namespace detail

inline std::vector<Triplet> sample_triplets(const Dataset& ds, size_t count, uint64_t seed) {
  const auto groups = detail::group_by_identity(ds);
  if (groups.size() < 2) {
    throw DataError("sample_triplets: need at least 2 identities, got " +
                    std::to_string(groups.size()));
  }
  std::vector<size_t> anchor_groups;  // identities with >= 2 samples qualify
  for (size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].second.size() >= 2) anchor_groups.push_back(g);
  }
  if (anchor_groups.empty()) {
    throw DataError("sample_triplets: no identity has >= 2 samples");
  }

  Rng rng(seed);
  std::vector<Triplet> out;
  out.reserve(count);
  for (size_t t = 0; t < count; ++t) {
    const auto& group = groups[anchor_groups[rng.index(anchor_groups.size())]];
    const auto& members = group.second;
    const size_t ai = rng.index(members.size());
    size_t pi = rng.index(members.size() - 1);
    if (pi >= ai) ++pi;
    size_t neg;
    do {
      neg = rng.index(ds.size());
    } while (ds.samples[neg].identity == group.first);
    out.push_back({members[ai], members[pi], neg});
  }
  return out;
}

inline std::vector<VerificationPair> build_verification_pairs(const Dataset& ds, size_t count,
                                                              uint64_t seed) {
  const auto groups = detail::group_by_identity(ds);
  if (groups.size() < 2) {
    throw DataError("build_verification_pairs: need at least 2 identities");
  }
  std::vector<size_t> rich_groups;
  for (size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].second.size() >= 2) rich_groups.push_back(g);
  }
  if (rich_groups.empty()) {
    throw DataError("build_verification_pairs: no identity has >= 2 samples");
  }

  Rng rng(seed);
  std::vector<VerificationPair> out;
  out.reserve(count);
  const size_t genuine = (count + 1) / 2;
  for (size_t i = 0; i < genuine; ++i) {
    const auto& members = groups[rich_groups[rng.index(rich_groups.size())]].second;
    const size_t ai = rng.index(members.size());
    size_t bi = rng.index(members.size() - 1);
    if (bi >= ai) ++bi;
    out.push_back({members[ai], members[bi], true});
  }
  for (size_t i = genuine; i < count; ++i) {
    const size_t a = rng.index(ds.size());
    size_t b;
    do {
      b = rng.index(ds.size());
    } while (ds.samples[b].identity == ds.samples[a].identity);
    out.push_back({a, b, false});
  }
  rng.shuffle(out);
  return out;
}

inline constexpr const char* kDatasetTaskList =
    "identity,emotion,gender,ethnicity,attractive,smiling";

// One sample per line: six integer labels then N reals, single-space
// separated, LF line endings.
inline void write_dataset(const Dataset& ds, const std::string& path) {
  if (ds.samples.empty()) throw DataError("write_dataset: empty dataset");
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "N=" << ds.dim() << " tasks=" << kDatasetTaskList << "\n";
  for (size_t i = 0; i < ds.size(); ++i) {
    const LabeledSample& s = ds.samples[i];
    if (static_cast<int>(s.embedding.size()) != ds.dim()) {
      throw ShapeError("write_dataset: sample " + std::to_string(i) + " has dimension " +
                       std::to_string(s.embedding.size()) + ", expected " +
                       std::to_string(ds.dim()));
    }
    for (double v : s.embedding) {
      if (!std::isfinite(v)) {
        throw NumericError("write_dataset: sample " + std::to_string(i) +
                           " has a non-finite embedding value");
      }
    }
    os << s.identity << ' ' << s.emotion << ' ' << s.gender << ' ' << s.ethnicity << ' '
       << s.attractive << ' ' << s.smiling;
    for (double v : s.embedding) os << ' ' << detail::format_double(v);
    os << "\n";
  }
  if (!os) throw DataError("failed while writing '" + path + "'");
}

inline Dataset read_dataset(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset file '" + path + "'");

  std::string text;
  if (!std::getline(is, text)) throw ParseError("dataset file: line 1: empty file");
  int n = -1;
  {
    auto toks = detail::split_ws(text);
    if (toks.size() != 2 || toks[0].rfind("N=", 0) != 0 || toks[1].rfind("tasks=", 0) != 0) {
      throw ParseError("dataset file: line 1: expected 'N=<int> tasks=" +
                       std::string(kDatasetTaskList) + "'");
    }
    n = static_cast<int>(detail::parse_double(toks[0].substr(2), 1, "dataset file"));
    if (n < 1) throw ParseError("dataset file: line 1: N must be >= 1");
    if (toks[1].substr(6) != kDatasetTaskList) {
      throw ParseError("dataset file: line 1: unsupported task list '" + toks[1].substr(6) + "'");
    }
  }

  Dataset ds;
  ds.provenance = "file " + path;
  int line = 1;
  auto check_label = [&](double v, int lo, int hi, const char* what) -> int {
    const int iv = static_cast<int>(v);
    if (v != iv || iv < lo || iv >= hi) {
      throw ParseError("dataset file: line " + std::to_string(line) + ": " + what + " label " +
                       detail::format_double(v) + " out of range [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + ")");
    }
    return iv;
  };
  while (std::getline(is, text)) {
    ++line;
    if (text.empty()) continue;  // tolerate a trailing blank line
    const auto toks = detail::split_ws(text);
    if (toks.size() != static_cast<size_t>(6 + n)) {
      throw ParseError("dataset file: line " + std::to_string(line) + ": expected " +
                       std::to_string(6 + n) + " fields, got " + std::to_string(toks.size()));
    }
    LabeledSample s;
    s.identity = check_label(detail::parse_double(toks[0], line, "dataset file"), 0, 1 << 30,
                             "identity");
    s.emotion = check_label(detail::parse_double(toks[1], line, "dataset file"), 0, kNumEmotions,
                            "emotion");
    s.gender = check_label(detail::parse_double(toks[2], line, "dataset file"), 0, 2, "gender");
    s.ethnicity =
        check_label(detail::parse_double(toks[3], line, "dataset file"), 0, 3, "ethnicity");
    s.attractive =
        check_label(detail::parse_double(toks[4], line, "dataset file"), 0, 2, "attractive");
    s.smiling = check_label(detail::parse_double(toks[5], line, "dataset file"), 0, 2, "smiling");
    s.embedding.resize(static_cast<size_t>(n));
    for (int j = 0; j < n; ++j) {
      s.embedding[static_cast<size_t>(j)] =
          detail::parse_double(toks[static_cast<size_t>(6 + j)], line, "dataset file");
      if (!std::isfinite(s.embedding[static_cast<size_t>(j)])) {
        throw ParseError("dataset file: line " + std::to_string(line) +
                         ": non-finite embedding value");
      }
    }
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw ParseError("dataset file: no samples after header");
  return ds;
}

}  // namespace blindrep
