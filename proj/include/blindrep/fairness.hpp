#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "blindrep/dataset.hpp"
#include "blindrep/errors.hpp"
#include "blindrep/optim.hpp"
#include "blindrep/probes.hpp"

namespace blindrep {

struct BiasSpec {
  double positive_class_smiling_rate = 0.70;  // smiling rate among attractive = 1
  double negative_class_smiling_rate = 0.30;  // smiling rate among attractive = 0
  bool balance_gender = true;
  double test_fraction = 0.25;  // identities reserved for the unbiased test split
  uint64_t seed = 1;

  void validate() const {
    for (double r : {positive_class_smiling_rate, negative_class_smiling_rate}) {
      if (r < 0.0 || r > 1.0) throw ConfigError("bias spec: smiling rates must be in [0, 1]");
    }
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
      throw ConfigError("bias spec: test_fraction must be in (0, 1)");
    }
  }
};

struct BiasedSplit {
  Dataset train;  // smiling-biased, attractiveness (and optionally gender) balanced
  Dataset test;   // 50/50 smiling within each attractiveness class
};

namespace detail {

struct FairnessCell {
  std::vector<size_t> by_gender[2];
  size_t size() const { return by_gender[0].size() + by_gender[1].size(); }
};

inline double cell_rate(size_t s1, size_t s0) {
  const size_t total = s1 + s0;
  return total == 0 ? 0.0 : static_cast<double>(s1) / static_cast<double>(total);
}

}  // namespace detail

// Builds the smiling-biased attractiveness training set and an unbiased test
// set. Identities never cross the train/test boundary, so memorized identity
// codes cannot leak; the bias in the measured TPR gap is purely the planted
// training-set correlation.
inline BiasedSplit build_biased_split(const Dataset& ds, const BiasSpec& spec) {
  spec.validate();
  if (ds.samples.empty()) throw DataError("build_biased_split: empty dataset");

  // Identity-disjoint pools.
  std::set<int> id_set;
  for (const LabeledSample& s : ds.samples) id_set.insert(s.identity);
  std::vector<int> ids(id_set.begin(), id_set.end());
  Rng rng(spec.seed);
  rng.shuffle(ids);
  const size_t n_test_ids = std::max<size_t>(
      1, static_cast<size_t>(std::llround(spec.test_fraction * static_cast<double>(ids.size()))));
  if (n_test_ids >= ids.size()) throw DataError("build_biased_split: too few identities");
  std::set<int> test_ids(ids.begin(), ids.begin() + static_cast<long>(n_test_ids));

  // Cells indexed by [attractive][smiling].
  detail::FairnessCell train_cells[2][2];
  detail::FairnessCell test_cells[2][2];
  for (size_t i = 0; i < ds.size(); ++i) {
    const LabeledSample& s = ds.samples[i];
    auto& cells = test_ids.count(s.identity) ? test_cells : train_cells;
    cells[s.attractive][s.smiling].by_gender[s.gender].push_back(i);
  }

  auto achievable = [&](const detail::FairnessCell cells[2][2]) {
    return "achievable rates: attractive " +
           std::to_string(detail::cell_rate(cells[1][1].size(), cells[1][0].size())) +
           ", not attractive " +
           std::to_string(detail::cell_rate(cells[0][1].size(), cells[0][0].size()));
  };

  // Test: equal smiling counts within each attractiveness class.
  std::vector<size_t> test_take;
  for (int a = 0; a < 2; ++a) {
    const size_t k = std::min(test_cells[a][0].size(), test_cells[a][1].size());
    if (k == 0) {
      throw DataError("build_biased_split: test cell (attractive=" + std::to_string(a) +
                      ") lacks a smiling group; " + achievable(test_cells));
    }
    for (int s = 0; s < 2; ++s) {
      std::vector<size_t> pool = test_cells[a][s].by_gender[0];
      pool.insert(pool.end(), test_cells[a][s].by_gender[1].begin(),
                  test_cells[a][s].by_gender[1].end());
      std::sort(pool.begin(), pool.end());
      rng.shuffle(pool);
      test_take.insert(test_take.end(), pool.begin(), pool.begin() + static_cast<long>(k));
    }
  }

  // Train: largest size meeting the requested rates, attractiveness balanced,
  // gender balanced per cell when requested.
  const double rates[2] = {spec.negative_class_smiling_rate, spec.positive_class_smiling_rate};
  auto capacity = [&](int a, int s) -> size_t {
    const auto& cell = train_cells[a][s];
    return spec.balance_gender ? 2 * std::min(cell.by_gender[0].size(), cell.by_gender[1].size())
                               : cell.size();
  };
  double budget = 1e18;
  for (int a = 0; a < 2; ++a) {
    for (int s = 0; s < 2; ++s) {
      const double want = s == 1 ? rates[a] : 1.0 - rates[a];
      if (want <= 0.0) continue;
      budget = std::min(budget, static_cast<double>(capacity(a, s)) / want);
    }
  }
  const size_t class_total = static_cast<size_t>(std::floor(budget));
  if (class_total < 4) {
    throw DataError("build_biased_split: cells too small to meet the requested rates; " +
                    achievable(train_cells));
  }

  std::vector<size_t> train_take;
  for (int a = 0; a < 2; ++a) {
    size_t n_smiling = static_cast<size_t>(std::llround(rates[a] * static_cast<double>(class_total)));
    if (spec.balance_gender && n_smiling % 2 == 1) --n_smiling;
    size_t n_plain = class_total - n_smiling;
    if (spec.balance_gender && n_plain % 2 == 1) --n_plain;
    const size_t counts[2] = {n_plain, n_smiling};
    for (int s = 0; s < 2; ++s) {
      if (spec.balance_gender) {
        for (int g = 0; g < 2; ++g) {
          std::vector<size_t> pool = train_cells[a][s].by_gender[g];
          rng.shuffle(pool);
          train_take.insert(train_take.end(), pool.begin(),
                            pool.begin() + static_cast<long>(counts[s] / 2));
        }
      } else {
        std::vector<size_t> pool = train_cells[a][s].by_gender[0];
        pool.insert(pool.end(), train_cells[a][s].by_gender[1].begin(),
                    train_cells[a][s].by_gender[1].end());
        std::sort(pool.begin(), pool.end());
        rng.shuffle(pool);
        train_take.insert(train_take.end(), pool.begin(),
                          pool.begin() + static_cast<long>(counts[s]));
      }
    }
  }

  std::sort(train_take.begin(), train_take.end());
  std::sort(test_take.begin(), test_take.end());

  BiasedSplit out;
  out.train.provenance = ds.provenance + " [biased train]";
  out.test.provenance = ds.provenance + " [unbiased test]";
  out.train.mixing_seed = ds.mixing_seed;
  out.test.mixing_seed = ds.mixing_seed;
  for (size_t i : train_take) out.train.samples.push_back(ds.samples[i]);
  for (size_t i : test_take) out.test.samples.push_back(ds.samples[i]);
  return out;
}

struct HeadConfig {
  int hidden = 0;  // 0 -> min(1024, 4 * dim)
  double threshold = 0.5;
  TrainConfig train;

  HeadConfig() { train.epochs = 25; }
};

// Attractiveness classifier: one fully connected relu layer and a sigmoid
// output unit, thresholded at cfg.threshold.
inline DenseNet train_attractiveness_head(const Dataset& train, const Representation& repr,
                                          const HeadConfig& cfg) {
  if (train.samples.empty()) throw DataError("train_attractiveness_head: empty training set");
  const Matrix x = repr.apply_dataset(train);
  const std::vector<int> y = labels_of(train, tasks::attractive());
  const std::set<int> classes(y.begin(), y.end());
  if (classes.size() < 2) {
    throw DataError("train_attractiveness_head: training set holds a single class");
  }
  const size_t hidden = cfg.hidden > 0
                            ? static_cast<size_t>(cfg.hidden)
                            : std::min<size_t>(1024, 4 * x.cols());
  Rng rng(cfg.train.seed);
  std::vector<LayerSpec> specs{{hidden, Activation::kRelu}, {1, Activation::kSigmoid}};
  DenseNet net = DenseNet::glorot("w_4", x.cols(), specs, rng);
  train_sigmoid_binary(net, x, y, cfg.train);
  return net;
}

struct FairnessReport {
  std::string representation;
  double accuracy = 0.0;        // percent
  double tpr_smiling = 0.0;     // percent, over attractive = 1 only
  double tpr_not_smiling = 0.0; // percent, over attractive = 1 only
  double eq_opp = 0.0;          // 100 - (tpr_smiling - tpr_not_smiling)
  int repeats = 1;
  std::vector<double> per_repeat_accuracy;
  std::vector<double> per_repeat_tpr_smiling;
  std::vector<double> per_repeat_tpr_not_smiling;
  std::vector<double> per_repeat_eq_opp;
};

// Equality-of-opportunity scoring: TPRs are computed over the positive class
// (attractive = 1) split by the protected smiling attribute.
inline FairnessReport equality_of_opportunity(std::span<const int> predictions,
                                              std::span<const int> attractive_labels,
                                              std::span<const int> smiling_labels) {
  if (predictions.size() != attractive_labels.size() ||
      predictions.size() != smiling_labels.size()) {
    throw ShapeError("equality_of_opportunity: sequence lengths differ");
  }
  if (predictions.empty()) throw DataError("equality_of_opportunity: empty input");

  size_t hits = 0;
  size_t positives[2] = {0, 0};
  size_t true_positives[2] = {0, 0};
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == attractive_labels[i]) ++hits;
    if (attractive_labels[i] == 1) {
      const int s = smiling_labels[i];
      ++positives[s];
      if (predictions[i] == 1) ++true_positives[s];
    }
  }
  if (positives[1] == 0) {
    throw DataError("equality_of_opportunity: no positive samples in the smiling group");
  }
  if (positives[0] == 0) {
    throw DataError("equality_of_opportunity: no positive samples in the not-smiling group");
  }

  FairnessReport out;
  out.accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(predictions.size());
  out.tpr_smiling =
      100.0 * static_cast<double>(true_positives[1]) / static_cast<double>(positives[1]);
  out.tpr_not_smiling =
      100.0 * static_cast<double>(true_positives[0]) / static_cast<double>(positives[0]);
  out.eq_opp = 100.0 - (out.tpr_smiling - out.tpr_not_smiling);
  out.per_repeat_accuracy = {out.accuracy};
  out.per_repeat_tpr_smiling = {out.tpr_smiling};
  out.per_repeat_tpr_not_smiling = {out.tpr_not_smiling};
  out.per_repeat_eq_opp = {out.eq_opp};
  return out;
}

// Full study: per repeat a fresh biased split (new seed, hence a different
// training set) is built once and every representation trains a head on it;
// reports aggregate the repeats per representation.
inline std::vector<FairnessReport> run_fairness_experiment(
    const Dataset& ds, const BiasSpec& spec, const std::vector<Representation>& representations,
    int repeats, const HeadConfig& head_cfg) {
  if (repeats < 1) throw ConfigError("fairness experiment: repeats must be >= 1");
  if (representations.empty()) throw ConfigError("fairness experiment: no representations");

  std::vector<FairnessReport> reports(representations.size());
  for (size_t k = 0; k < representations.size(); ++k) {
    reports[k].representation = representations[k].name();
    reports[k].repeats = repeats;
    reports[k].per_repeat_accuracy.clear();
    reports[k].per_repeat_tpr_smiling.clear();
    reports[k].per_repeat_tpr_not_smiling.clear();
    reports[k].per_repeat_eq_opp.clear();
  }

  for (int rep = 0; rep < repeats; ++rep) {
    BiasSpec rep_spec = spec;
    rep_spec.seed = sub_seed(spec.seed, static_cast<uint64_t>(rep) + 1);
    const BiasedSplit split = build_biased_split(ds, rep_spec);
    const std::vector<int> y_attr = labels_of(split.test, tasks::attractive());
    const std::vector<int> y_smile = labels_of(split.test, tasks::smiling());

    for (size_t k = 0; k < representations.size(); ++k) {
      HeadConfig cfg = head_cfg;
      cfg.train.seed = sub_seed(sub_seed(head_cfg.train.seed, static_cast<uint64_t>(rep)), k);
      const DenseNet head = train_attractiveness_head(split.train, representations[k], cfg);
      const Matrix x_test = representations[k].apply_dataset(split.test);
      const std::vector<double> p = predict_sigmoid(head, x_test);
      std::vector<int> pred(p.size());
      for (size_t i = 0; i < p.size(); ++i) pred[i] = p[i] >= cfg.threshold ? 1 : 0;
      const FairnessReport one = equality_of_opportunity(pred, y_attr, y_smile);
      reports[k].per_repeat_accuracy.push_back(one.accuracy);
      reports[k].per_repeat_tpr_smiling.push_back(one.tpr_smiling);
      reports[k].per_repeat_tpr_not_smiling.push_back(one.tpr_not_smiling);
      reports[k].per_repeat_eq_opp.push_back(one.eq_opp);
    }
  }

  auto mean = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    return v.empty() ? 0.0 : m / static_cast<double>(v.size());
  };
  for (FairnessReport& r : reports) {
    r.accuracy = mean(r.per_repeat_accuracy);
    r.tpr_smiling = mean(r.per_repeat_tpr_smiling);
    r.tpr_not_smiling = mean(r.per_repeat_tpr_not_smiling);
    r.eq_opp = 100.0 - (r.tpr_smiling - r.tpr_not_smiling);
  }
  return reports;
}

}  // namespace blindrep
