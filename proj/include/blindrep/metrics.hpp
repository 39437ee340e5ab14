#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "blindrep/errors.hpp"
#include "blindrep/fairness.hpp"
#include "blindrep/probes.hpp"
#include "blindrep/suppression.hpp"

namespace blindrep {

struct Table1Row {
  std::string task;  // identity, gender, ethnicity, emotion-nn, emotion-svm, emotion-rf
  double chance = 0.0;  // percent
  double before = 0.0;  // percent, raw x
  std::vector<std::pair<std::string, double>> after;  // (method, percent)
  std::vector<std::pair<std::string, double>> diff;   // (method, percent)
};

// Everything one experiment run reports. Rendered tables are formatted from
// these fields only; timings live in a separate file so reruns with the same
// seed produce byte-identical metrics.
struct MetricsReport {
  std::string experiment_id;
  std::vector<Table1Row> table1;
  bool has_ablation = false;
  AblationCurve ablation;
  std::vector<FairnessReport> fairness;
  bool has_sn = false;
  std::vector<SnIterationStats> sn_history;
  bool sn_adversary_non_increasing = false;
  bool has_lnl = false;
  std::vector<LnlEpochStats> lnl_history;
  std::vector<std::pair<std::string, double>> extra;    // named scalars
  std::vector<std::pair<std::string, double>> timings;  // stage -> seconds
};

namespace detail {

inline std::string metric_value(double v) { return format_double(v); }

inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace detail

inline void save_metrics(const MetricsReport& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "metrics 1\n";
  os << "id = " << m.experiment_id << "\n";
  os << "table1.count = " << m.table1.size() << "\n";
  for (size_t i = 0; i < m.table1.size(); ++i) {
    const Table1Row& row = m.table1[i];
    const std::string p = "table1." + std::to_string(i) + ".";
    os << p << "task = " << row.task << "\n";
    os << p << "chance = " << detail::metric_value(row.chance) << "\n";
    os << p << "before = " << detail::metric_value(row.before) << "\n";
    for (const auto& [method, v] : row.after) {
      os << p << "after." << method << " = " << detail::metric_value(v) << "\n";
    }
    for (const auto& [method, v] : row.diff) {
      os << p << "diff." << method << " = " << detail::metric_value(v) << "\n";
    }
  }
  os << "ablation.present = " << (m.has_ablation ? 1 : 0) << "\n";
  if (m.has_ablation) {
    os << "ablation.repeats = " << m.ablation.repeats << "\n";
    os << "ablation.count = " << m.ablation.points.size() << "\n";
    for (size_t i = 0; i < m.ablation.points.size(); ++i) {
      const AblationPoint& pt = m.ablation.points[i];
      const std::string p = "ablation." + std::to_string(i) + ".";
      os << p << "fraction = " << detail::metric_value(pt.fraction) << "\n";
      os << p << "mean = " << detail::metric_value(pt.mean_accuracy) << "\n";
      os << p << "std = " << detail::metric_value(pt.std_accuracy) << "\n";
    }
  }
  os << "fairness.count = " << m.fairness.size() << "\n";
  for (size_t i = 0; i < m.fairness.size(); ++i) {
    const FairnessReport& r = m.fairness[i];
    const std::string p = "fairness." + std::to_string(i) + ".";
    os << p << "representation = " << r.representation << "\n";
    os << p << "accuracy = " << detail::metric_value(r.accuracy) << "\n";
    os << p << "tpr_smiling = " << detail::metric_value(r.tpr_smiling) << "\n";
    os << p << "tpr_not_smiling = " << detail::metric_value(r.tpr_not_smiling) << "\n";
    os << p << "eq_opp = " << detail::metric_value(r.eq_opp) << "\n";
    os << p << "repeats = " << r.repeats << "\n";
    for (size_t k = 0; k < r.per_repeat_eq_opp.size(); ++k) {
      const std::string q = p + "repeat." + std::to_string(k) + ".";
      os << q << "accuracy = " << detail::metric_value(r.per_repeat_accuracy[k]) << "\n";
      os << q << "tpr_smiling = " << detail::metric_value(r.per_repeat_tpr_smiling[k]) << "\n";
      os << q << "tpr_not_smiling = " << detail::metric_value(r.per_repeat_tpr_not_smiling[k])
         << "\n";
      os << q << "eq_opp = " << detail::metric_value(r.per_repeat_eq_opp[k]) << "\n";
    }
  }
  os << "sn.present = " << (m.has_sn ? 1 : 0) << "\n";
  if (m.has_sn) {
    os << "sn.iterations = " << m.sn_history.size() << "\n";
    os << "sn.adversary_non_increasing = " << (m.sn_adversary_non_increasing ? 1 : 0) << "\n";
    for (size_t i = 0; i < m.sn_history.size(); ++i) {
      const std::string p = "sn.history." + std::to_string(i) + ".";
      os << p << "triplet_loss = " << detail::metric_value(m.sn_history[i].triplet_loss) << "\n";
      os << p << "mean_delta = " << detail::metric_value(m.sn_history[i].mean_delta) << "\n";
      os << p << "adversary_accuracy = "
         << detail::metric_value(m.sn_history[i].adversary_accuracy) << "\n";
    }
  }
  os << "lnl.present = " << (m.has_lnl ? 1 : 0) << "\n";
  if (m.has_lnl) {
    os << "lnl.epochs = " << m.lnl_history.size() << "\n";
    for (size_t i = 0; i < m.lnl_history.size(); ++i) {
      const std::string p = "lnl.history." + std::to_string(i) + ".";
      os << p << "main_accuracy = " << detail::metric_value(m.lnl_history[i].main_accuracy)
         << "\n";
      os << p << "emotion_accuracy = "
         << detail::metric_value(m.lnl_history[i].emotion_accuracy) << "\n";
      os << p << "mean_posterior_entropy = "
         << detail::metric_value(m.lnl_history[i].mean_posterior_entropy) << "\n";
    }
  }
  os << "extra.count = " << m.extra.size() << "\n";
  for (const auto& [key, v] : m.extra) {
    os << "extra." << key << " = " << detail::metric_value(v) << "\n";
  }
  if (!os) throw DataError("failed while writing '" + path + "'");
}

inline void save_timings(const MetricsReport& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "timings 1\n";
  for (const auto& [key, v] : m.timings) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    os << key << " = " << buf << "\n";
  }
}

namespace detail {

class KeyValueFile {
 public:
  explicit KeyValueFile(const std::string& path, const char* header) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open '" + path + "'");
    std::string text;
    if (!std::getline(is, text) || text != header) {
      throw ParseError("'" + path + "': line 1: expected '" + header + "'");
    }
    int line = 1;
    while (std::getline(is, text)) {
      ++line;
      if (text.empty()) continue;
      const auto eq = text.find(" = ");
      if (eq == std::string::npos) {
        throw ParseError("'" + path + "': line " + std::to_string(line) + ": expected key = value");
      }
      entries_.emplace(text.substr(0, eq), text.substr(eq + 3));
      order_.push_back(text.substr(0, eq));
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  const std::string& str(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ParseError("metrics file: missing key '" + key + "'");
    return it->second;
  }

  double num(const std::string& key) const { return parse_double(str(key), 0, "metrics file"); }

  long integer(const std::string& key) const { return std::lround(num(key)); }

  const std::vector<std::string>& order() const { return order_; }

 private:
  std::map<std::string, std::string> entries_;
  std::vector<std::string> order_;
};

}  // namespace detail

inline MetricsReport load_metrics(const std::string& path) {
  detail::KeyValueFile kv(path, "metrics 1");
  MetricsReport m;
  m.experiment_id = kv.str("id");
  const long rows = kv.integer("table1.count");
  for (long i = 0; i < rows; ++i) {
    const std::string p = "table1." + std::to_string(i) + ".";
    Table1Row row;
    row.task = kv.str(p + "task");
    row.chance = kv.num(p + "chance");
    row.before = kv.num(p + "before");
    for (const char* method : {"sn", "lnl"}) {
      if (kv.has(p + "after." + method)) {
        row.after.emplace_back(method, kv.num(p + "after." + method));
        row.diff.emplace_back(method, kv.num(p + "diff." + method));
      }
    }
    m.table1.push_back(std::move(row));
  }
  m.has_ablation = kv.integer("ablation.present") != 0;
  if (m.has_ablation) {
    m.ablation.repeats = static_cast<int>(kv.integer("ablation.repeats"));
    const long pts = kv.integer("ablation.count");
    for (long i = 0; i < pts; ++i) {
      const std::string p = "ablation." + std::to_string(i) + ".";
      m.ablation.points.push_back(
          {kv.num(p + "fraction"), kv.num(p + "mean"), kv.num(p + "std")});
    }
  }
  const long fair = kv.integer("fairness.count");
  for (long i = 0; i < fair; ++i) {
    const std::string p = "fairness." + std::to_string(i) + ".";
    FairnessReport r;
    r.representation = kv.str(p + "representation");
    r.accuracy = kv.num(p + "accuracy");
    r.tpr_smiling = kv.num(p + "tpr_smiling");
    r.tpr_not_smiling = kv.num(p + "tpr_not_smiling");
    r.eq_opp = kv.num(p + "eq_opp");
    r.repeats = static_cast<int>(kv.integer(p + "repeats"));
    for (long k = 0;; ++k) {
      const std::string q = p + "repeat." + std::to_string(k) + ".";
      if (!kv.has(q + "eq_opp")) break;
      r.per_repeat_accuracy.push_back(kv.num(q + "accuracy"));
      r.per_repeat_tpr_smiling.push_back(kv.num(q + "tpr_smiling"));
      r.per_repeat_tpr_not_smiling.push_back(kv.num(q + "tpr_not_smiling"));
      r.per_repeat_eq_opp.push_back(kv.num(q + "eq_opp"));
    }
    m.fairness.push_back(std::move(r));
  }
  m.has_sn = kv.integer("sn.present") != 0;
  if (m.has_sn) {
    m.sn_adversary_non_increasing = kv.integer("sn.adversary_non_increasing") != 0;
    const long iters = kv.integer("sn.iterations");
    for (long i = 0; i < iters; ++i) {
      const std::string p = "sn.history." + std::to_string(i) + ".";
      m.sn_history.push_back({kv.num(p + "triplet_loss"), kv.num(p + "mean_delta"),
                              kv.num(p + "adversary_accuracy")});
    }
  }
  m.has_lnl = kv.integer("lnl.present") != 0;
  if (m.has_lnl) {
    const long epochs = kv.integer("lnl.epochs");
    for (long i = 0; i < epochs; ++i) {
      const std::string p = "lnl.history." + std::to_string(i) + ".";
      m.lnl_history.push_back({kv.num(p + "main_accuracy"), kv.num(p + "emotion_accuracy"),
                               kv.num(p + "mean_posterior_entropy")});
    }
  }
  for (const std::string& key : kv.order()) {
    if (key.rfind("extra.", 0) == 0 && key != "extra.count") {
      m.extra.emplace_back(key.substr(6), kv.num(key));
    }
  }
  return m;
}

// Rendered tables print every number with 2-decimal fixed precision; all
// values come straight from the persisted report.
inline void write_table1_csv(const MetricsReport& m, const std::string& path) {
  if (m.table1.empty()) throw ConfigError("report: table1 section requested but absent");
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  std::vector<std::string> methods;
  for (const auto& [method, v] : m.table1.front().after) methods.push_back(method);
  os << "task,x";
  for (const std::string& method : methods) os << ",phi_" << method << ",diff_" << method;
  os << "\n";
  for (const Table1Row& row : m.table1) {
    os << row.task << "," << detail::csv_number(row.before);
    for (const std::string& method : methods) {
      double after = 0.0, diff = 0.0;
      for (const auto& [name, v] : row.after) {
        if (name == method) after = v;
      }
      for (const auto& [name, v] : row.diff) {
        if (name == method) diff = v;
      }
      os << "," << detail::csv_number(after) << "," << detail::csv_number(diff);
    }
    os << "\n";
  }
}

inline void write_fairness_csv(const MetricsReport& m, const std::string& path) {
  if (m.fairness.empty()) throw ConfigError("report: fairness section requested but absent");
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "method,accuracy,tpr_smiling,tpr_not_smiling,eq_opp\n";
  for (const FairnessReport& r : m.fairness) {
    os << r.representation << "," << detail::csv_number(r.accuracy) << ","
       << detail::csv_number(r.tpr_smiling) << "," << detail::csv_number(r.tpr_not_smiling)
       << "," << detail::csv_number(r.eq_opp) << "\n";
  }
}

inline void write_ablation_csv(const MetricsReport& m, const std::string& path) {
  if (!m.has_ablation) throw ConfigError("report: ablation section requested but absent");
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "fraction,mean_accuracy,std_accuracy\n";
  for (const AblationPoint& pt : m.ablation.points) {
    os << detail::csv_number(pt.fraction) << "," << detail::csv_number(100.0 * pt.mean_accuracy)
       << "," << detail::csv_number(100.0 * pt.std_accuracy) << "\n";
  }
}

// Minimal vector-graphics line chart of the ablation curve.
inline void write_ablation_svg(const MetricsReport& m, const std::string& path) {
  if (!m.has_ablation) throw ConfigError("report: ablation section requested but absent");
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  const double width = 640, height = 420, ml = 70, mr = 20, mt = 30, mb = 50;
  const double pw = width - ml - mr, ph = height - mt - mb;
  auto sx = [&](double fraction) { return ml + fraction * pw; };
  auto sy = [&](double acc) { return mt + (1.0 - acc) * ph; };
  auto fmt = [](double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    return std::string(buf);
  };

  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << fmt(width / 2) << "\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">"
     << "emotion probe accuracy vs suppressed feature fraction</text>\n";
  // axes
  os << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(mt) << "\" x2=\"" << fmt(ml) << "\" y2=\""
     << fmt(mt + ph) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << fmt(ml) << "\" y1=\"" << fmt(mt + ph) << "\" x2=\"" << fmt(ml + pw)
     << "\" y2=\"" << fmt(mt + ph) << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 10; t += 2) {
    const double f = t / 10.0;
    os << "<text x=\"" << fmt(sx(f)) << "\" y=\"" << fmt(mt + ph + 18)
       << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(f) << "</text>\n";
    os << "<line x1=\"" << fmt(sx(f)) << "\" y1=\"" << fmt(mt + ph) << "\" x2=\"" << fmt(sx(f))
       << "\" y2=\"" << fmt(mt + ph + 4) << "\" stroke=\"black\"/>\n";
  }
  for (int t = 0; t <= 10; t += 2) {
    const double a = t / 10.0;
    os << "<text x=\"" << fmt(ml - 8) << "\" y=\"" << fmt(sy(a) + 4)
       << "\" text-anchor=\"end\" font-size=\"11\">" << fmt(100 * a) << "</text>\n";
    os << "<line x1=\"" << fmt(ml - 4) << "\" y1=\"" << fmt(sy(a)) << "\" x2=\"" << fmt(ml)
       << "\" y2=\"" << fmt(sy(a)) << "\" stroke=\"black\"/>\n";
  }
  os << "<text x=\"" << fmt(ml + pw / 2) << "\" y=\"" << fmt(height - 10)
     << "\" text-anchor=\"middle\" font-size=\"12\">suppressed fraction</text>\n";
  os << "<text x=\"16\" y=\"" << fmt(mt + ph / 2)
     << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 " << fmt(mt + ph / 2)
     << ")\">accuracy (%)</text>\n";
  // error bars and polyline
  std::string points;
  for (const AblationPoint& pt : m.ablation.points) {
    const double x = sx(pt.fraction);
    points += fmt(x) + "," + fmt(sy(pt.mean_accuracy)) + " ";
    os << "<line x1=\"" << fmt(x) << "\" y1=\"" << fmt(sy(pt.mean_accuracy - pt.std_accuracy))
       << "\" x2=\"" << fmt(x) << "\" y2=\"" << fmt(sy(pt.mean_accuracy + pt.std_accuracy))
       << "\" stroke=\"steelblue\"/>\n";
  }
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"" << points
     << "\"/>\n";
  for (const AblationPoint& pt : m.ablation.points) {
    os << "<circle cx=\"" << fmt(sx(pt.fraction)) << "\" cy=\"" << fmt(sy(pt.mean_accuracy))
       << "\" r=\"3\" fill=\"steelblue\"/>\n";
  }
  os << "</svg>\n";
}

}  // namespace blindrep
