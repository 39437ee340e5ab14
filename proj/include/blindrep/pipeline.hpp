#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "blindrep/config.hpp"
#include "blindrep/dataset.hpp"
#include "blindrep/errors.hpp"
#include "blindrep/fairness.hpp"
#include "blindrep/metrics.hpp"
#include "blindrep/probes.hpp"
#include "blindrep/suppression.hpp"

namespace blindrep {

// Master-seed fan-out: fixed offsets per stage, so a stage rerun on its own
// reproduces the values it had inside a full `all` run.
namespace stage_seed {
inline constexpr uint64_t kGenerate = 1;
inline constexpr uint64_t kSplit = 2;
inline constexpr uint64_t kDevPairs = 3;
inline constexpr uint64_t kTestPairs = 4;
inline constexpr uint64_t kSensitiveNets = 5;
inline constexpr uint64_t kLearnNotToLearn = 6;
inline constexpr uint64_t kProbe = 7;
inline constexpr uint64_t kAblate = 8;
inline constexpr uint64_t kFairnessBias = 9;
inline constexpr uint64_t kFairnessHead = 10;
}  // namespace stage_seed

struct PipelinePaths {
  std::string out_dir;
  std::string dataset() const { return out_dir + "/dataset.txt"; }
  std::string suppressor(SuppressorKind k) const {
    return out_dir + "/suppressor_" + suppressor_kind_name(k) + ".txt";
  }
  std::string metrics() const { return out_dir + "/metrics.txt"; }
  std::string timings() const { return out_dir + "/timings.txt"; }
  std::string table1_csv() const { return out_dir + "/table1.csv"; }
  std::string fairness_csv() const { return out_dir + "/fairness.csv"; }
  std::string ablation_csv() const { return out_dir + "/ablation.csv"; }
  std::string ablation_svg() const { return out_dir + "/ablation.svg"; }
  std::string pca_csv(const std::string& repr) const {
    return out_dir + "/pca_" + repr + ".csv";
  }
};

class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (cfg_.out_dir.empty()) {
      const char* env = std::getenv("BLINDREP_OUT");
      cfg_.out_dir = env && *env ? env : "out";
    }
    paths_.out_dir = cfg_.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(paths_.out_dir, ec);
    if (ec) throw ConfigError("cannot create output directory '" + paths_.out_dir + "'");
  }

  const ExperimentConfig& config() const { return cfg_; }
  const PipelinePaths& paths() const { return paths_; }

  void generate() {
    GenConfig gen = cfg_.gen;
    if (gen.seed == 0) gen.seed = sub_seed(cfg_.seed, stage_seed::kGenerate);
    const Dataset ds = generate_dataset(gen);
    write_dataset(ds, paths_.dataset());
  }

  void train(SuppressorKind kind) {
    const Dataset ds = load_input_dataset();
    const DatasetSplits splits = make_splits(ds);
    MetricsReport metrics = load_or_new_metrics();

    if (kind == SuppressorKind::kSensitiveNets) {
      SuppressionConfig sn = cfg_.sn;
      if (sn.inner.seed == 0) sn.inner.seed = sub_seed(cfg_.seed, stage_seed::kSensitiveNets);
      const Suppressor s = train_sensitivenets(splits.train, splits.train, sn);
      save_suppressor(s, paths_.suppressor(kind));
      metrics.has_sn = true;
      metrics.sn_history = s.sn_history;
      metrics.sn_adversary_non_increasing = adversary_trend_non_increasing(s.sn_history);
      upsert_extra(metrics, "sn_variance_ratio", variance_ratio(s, splits.test));
    } else {
      SuppressionConfig lnl = cfg_.lnl;
      if (lnl.inner.seed == 0) {
        lnl.inner.seed = sub_seed(cfg_.seed, stage_seed::kLearnNotToLearn);
      }
      const TaskSpec task = main_task_spec(splits.train);
      const Suppressor s = train_lnl(splits.train, task, lnl);
      save_suppressor(s, paths_.suppressor(kind));
      metrics.has_lnl = true;
      metrics.lnl_history = s.lnl_history;
    }
    metrics.experiment_id = experiment_id();
    save_metrics(metrics, paths_.metrics());
  }

  void probe() {
    const Dataset ds = load_input_dataset();
    const DatasetSplits splits = make_splits(ds);
    MetricsReport metrics = load_or_new_metrics();

    std::vector<Suppressor> suppressors;
    std::vector<Representation> reprs{Representation::raw()};
    for (SuppressorKind kind :
         {SuppressorKind::kSensitiveNets, SuppressorKind::kLearnNotToLearn}) {
      if (std::filesystem::exists(paths_.suppressor(kind))) {
        suppressors.push_back(load_suppressor(paths_.suppressor(kind)));
      }
    }
    reprs.reserve(1 + suppressors.size());
    for (const Suppressor& s : suppressors) reprs.push_back(Representation::blinded(s));

    const auto dev_pairs =
        build_verification_pairs(splits.train, static_cast<size_t>(cfg_.verification_pairs),
                                 sub_seed(cfg_.seed, stage_seed::kDevPairs));
    const auto test_pairs =
        build_verification_pairs(splits.test, static_cast<size_t>(cfg_.verification_pairs),
                                 sub_seed(cfg_.seed, stage_seed::kTestPairs));

    const uint64_t probe_seed =
        cfg_.probe.train.seed != 0 ? cfg_.probe.train.seed
                                   : sub_seed(cfg_.seed, stage_seed::kProbe);

    struct RowSpec {
      std::string name;
      TaskSpec task;
      ProbeKind kind;
      double chance;
      bool verification;
    };
    const std::vector<RowSpec> rows = {
        {"identity", {}, ProbeKind::kMlp, 50.0, true},
        {"gender", tasks::gender(), ProbeKind::kMlp, 50.0, false},
        {"ethnicity", tasks::ethnicity(), ProbeKind::kMlp, 100.0 / 3.0, false},
        {"emotion-nn", tasks::emotion(), ProbeKind::kMlp, 100.0 / 6.0, false},
        {"emotion-svm", tasks::emotion(), ProbeKind::kLinearHinge, 100.0 / 6.0, false},
        {"emotion-rf", tasks::emotion(), ProbeKind::kRandomForest, 100.0 / 6.0, false},
    };

    const Matrix x_train_raw = embeddings_of(splits.train);
    const Matrix x_test_raw = embeddings_of(splits.test);

    metrics.table1.clear();
    for (size_t ri = 0; ri < rows.size(); ++ri) {
      const RowSpec& spec = rows[ri];
      Table1Row row;
      row.task = spec.name;
      row.chance = spec.chance;
      for (size_t k = 0; k < reprs.size(); ++k) {
        double acc = 0.0;
        if (spec.verification) {
          const VerificationResult vr =
              verification_accuracy(reprs[k], splits.train, dev_pairs, splits.test, test_pairs);
          acc = 100.0 * vr.accuracy;
          if (k == 0) upsert_extra(metrics, "verification_threshold_x", vr.threshold);
        } else {
          ProbeConfig pc = cfg_.probe;
          pc.train.seed = sub_seed(sub_seed(probe_seed, ri), k);
          const std::vector<int> y_train = labels_of(splits.train, spec.task);
          const std::vector<int> y_test = labels_of(splits.test, spec.task);
          const ProbeResult res = train_probe_split(
              reprs[k].apply_rows(x_train_raw), y_train, reprs[k].apply_rows(x_test_raw),
              y_test, spec.task, spec.kind, pc);
          acc = 100.0 * res.test_accuracy;
        }
        if (k == 0) {
          row.before = acc;
        } else {
          const std::string method = suppressor_kind_name(suppressors[k - 1].kind);
          row.after.emplace_back(method, acc);
          row.diff.emplace_back(method, diff_metric(row.before, acc, row.chance));
        }
      }
      metrics.table1.push_back(std::move(row));
    }

    // Qualitative 2-component projection of the test split per representation.
    for (const Representation& repr : reprs) {
      const PcaResult pca = pca_project(splits.test, repr, 2);
      std::ofstream os(paths_.pca_csv(repr.name()));
      if (!os) throw DataError("cannot open pca output for writing");
      os << "sample,emotion,c1,c2\n";
      for (size_t i = 0; i < splits.test.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%zu,%d,%.6f,%.6f", i, splits.test.samples[i].emotion,
                      pca.coords(i, 0), pca.coords(i, 1));
        os << buf << "\n";
      }
    }

    metrics.experiment_id = experiment_id();
    save_metrics(metrics, paths_.metrics());
    write_table1_csv(metrics, paths_.table1_csv());
  }

  void ablate() {
    const Dataset ds = load_input_dataset();
    MetricsReport metrics = load_or_new_metrics();
    ProbeConfig pc = cfg_.probe;
    pc.train.seed = pc.train.seed != 0 ? pc.train.seed : sub_seed(cfg_.seed, stage_seed::kAblate);
    metrics.ablation = feature_ablation_curve(ds, tasks::emotion(), cfg_.ablate.fractions,
                                              cfg_.ablate.repeats, pc);
    metrics.has_ablation = true;
    metrics.experiment_id = experiment_id();
    save_metrics(metrics, paths_.metrics());
    write_ablation_csv(metrics, paths_.ablation_csv());
    write_ablation_svg(metrics, paths_.ablation_svg());
  }

  void fairness() {
    const Dataset ds = load_input_dataset();
    MetricsReport metrics = load_or_new_metrics();

    std::vector<Suppressor> suppressors;
    for (SuppressorKind kind :
         {SuppressorKind::kSensitiveNets, SuppressorKind::kLearnNotToLearn}) {
      if (std::filesystem::exists(paths_.suppressor(kind))) {
        suppressors.push_back(load_suppressor(paths_.suppressor(kind)));
      }
    }

    BiasSpec biased = cfg_.bias;
    if (biased.seed == 0) biased.seed = sub_seed(cfg_.seed, stage_seed::kFairnessBias);
    HeadConfig head = cfg_.head;
    if (head.train.seed == 0) {
      head.train.seed = sub_seed(cfg_.seed, stage_seed::kFairnessHead);
    }

    metrics.fairness.clear();
    // Unbiased baseline first (Table-III ordering), then the biased rows.
    {
      BiasSpec unbiased = biased;
      unbiased.positive_class_smiling_rate = 0.5;
      unbiased.negative_class_smiling_rate = 0.5;
      auto reports = run_fairness_experiment(ds, unbiased, {Representation::raw()},
                                             cfg_.fairness_repeats, head);
      reports[0].representation = "x (unbiased)";
      metrics.fairness.push_back(std::move(reports[0]));
    }
    {
      std::vector<Representation> reprs{Representation::raw()};
      for (const Suppressor& s : suppressors) reprs.push_back(Representation::blinded(s));
      auto reports = run_fairness_experiment(ds, biased, reprs, cfg_.fairness_repeats, head);
      for (FairnessReport& r : reports) {
        r.representation += " (biased)";
        metrics.fairness.push_back(std::move(r));
      }
    }

    metrics.experiment_id = experiment_id();
    save_metrics(metrics, paths_.metrics());
    write_fairness_csv(metrics, paths_.fairness_csv());
  }

  // Renders the requested sections from the persisted metrics. An empty list
  // renders whatever is present.
  void report(const std::vector<std::string>& sections = {}) {
    const MetricsReport metrics = load_metrics(paths_.metrics());
    const bool all = sections.empty();
    auto wants = [&](const std::string& s) {
      return all || std::find(sections.begin(), sections.end(), s) != sections.end();
    };
    for (const std::string& s : sections) {
      if (s != "table1" && s != "ablation" && s != "fairness") {
        throw ConfigError("report: unknown section '" + s + "'");
      }
    }
    if (wants("table1") && (!all || !metrics.table1.empty())) {
      write_table1_csv(metrics, paths_.table1_csv());
    }
    if (wants("ablation") && (!all || metrics.has_ablation)) {
      write_ablation_csv(metrics, paths_.ablation_csv());
      write_ablation_svg(metrics, paths_.ablation_svg());
    }
    if (wants("fairness") && (!all || !metrics.fairness.empty())) {
      write_fairness_csv(metrics, paths_.fairness_csv());
    }
  }

  void all() {
    MetricsReport timing_sink;
    auto timed = [&](const char* stage, auto&& fn) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      const auto t1 = std::chrono::steady_clock::now();
      timing_sink.timings.emplace_back(stage, std::chrono::duration<double>(t1 - t0).count());
    };
    timed("generate", [&] { generate(); });
    timed("train_sn", [&] { train(SuppressorKind::kSensitiveNets); });
    timed("train_lnl", [&] { train(SuppressorKind::kLearnNotToLearn); });
    timed("probe", [&] { probe(); });
    timed("ablate", [&] { ablate(); });
    timed("fairness", [&] { fairness(); });
    timed("report", [&] { report(); });
    save_timings(timing_sink, paths_.timings());
  }

  Dataset load_input_dataset() const {
    const std::string path = cfg_.data_path.empty() ? paths_.dataset() : cfg_.data_path;
    if (!std::filesystem::exists(path)) {
      throw DataError("dataset file '" + path + "' not found; run `generate` first or set data_path");
    }
    return read_dataset(path);
  }

  DatasetSplits make_splits(const Dataset& ds) const {
    return split_by_identity(ds, {cfg_.train_fraction, cfg_.dev_fraction, cfg_.test_fraction},
                             sub_seed(cfg_.seed, stage_seed::kSplit),
                             SplitMode::kIdentityDisjoint);
  }

  static bool adversary_trend_non_increasing(const std::vector<SnIterationStats>& history) {
    if (history.size() < 2) return true;
    const size_t quartile = std::max<size_t>(2, (history.size() + 3) / 4);
    const size_t from = history.size() - quartile;
    for (size_t i = from; i + 1 < history.size(); ++i) {
      if (history[i + 1].adversary_accuracy > history[i].adversary_accuracy + 1e-9) return false;
    }
    return true;
  }

  static double variance_ratio(const Suppressor& s, const Dataset& ds) {
    const Matrix x = embeddings_of(ds);
    const Matrix phi = suppress(s, x);
    auto total_variance = [](const Matrix& m) {
      std::vector<double> mean(m.cols(), 0.0);
      for (size_t r = 0; r < m.rows(); ++r) {
        for (size_t c = 0; c < m.cols(); ++c) mean[c] += m(r, c);
      }
      for (double& v : mean) v /= static_cast<double>(m.rows());
      double var = 0.0;
      for (size_t r = 0; r < m.rows(); ++r) {
        for (size_t c = 0; c < m.cols(); ++c) {
          const double d = m(r, c) - mean[c];
          var += d * d;
        }
      }
      return var / static_cast<double>(m.rows());
    };
    return total_variance(phi) / total_variance(x);
  }

 private:
  MetricsReport load_or_new_metrics() const {
    if (std::filesystem::exists(paths_.metrics())) return load_metrics(paths_.metrics());
    return MetricsReport{};
  }

  static void upsert_extra(MetricsReport& m, const std::string& key, double value) {
    for (auto& [k, v] : m.extra) {
      if (k == key) {
        v = value;
        return;
      }
    }
    m.extra.emplace_back(key, value);
  }

  std::string experiment_id() const { return "seed" + std::to_string(cfg_.seed); }

  TaskSpec main_task_spec(const Dataset& train) const {
    if (cfg_.lnl_main_task == "gender") return tasks::gender();
    if (cfg_.lnl_main_task == "ethnicity") return tasks::ethnicity();
    return tasks::identity(train);
  }

  ExperimentConfig cfg_;
  PipelinePaths paths_;
};

}  // namespace blindrep
