#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "blindrep/dataset.hpp"
#include "blindrep/errors.hpp"
#include "blindrep/fairness.hpp"
#include "blindrep/probes.hpp"
#include "blindrep/suppression.hpp"

namespace blindrep {

struct AblateConfig {
  std::vector<double> fractions = {0.0, 0.5, 0.75, 0.9, 0.99};
  int repeats = 5;
};

// Composite settings for the whole pipeline. A seed value of 0 in any
// sub-config means "derive from the master seed" (see pipeline.hpp for the
// per-stage offsets).
struct ExperimentConfig {
  uint64_t seed = 7;      // master seed
  std::string out_dir;    // resolution: --out flag, this field, $BLINDREP_OUT, "out"
  std::string data_path;  // optional external dataset file; overrides out/dataset.txt

  double train_fraction = 0.8;
  double dev_fraction = 0.0;
  double test_fraction = 0.2;
  int verification_pairs = 600;

  GenConfig gen;
  ProbeConfig probe;
  SuppressionConfig sn;
  SuppressionConfig lnl;
  std::string lnl_main_task = "gender";
  AblateConfig ablate;
  BiasSpec bias;
  HeadConfig head;
  int fairness_repeats = 5;

  ExperimentConfig() {
    gen.seed = 0;
    probe.train.seed = 0;
    sn.inner.seed = 0;
    lnl.inner.seed = 0;
    bias.seed = 0;
    head.train.seed = 0;
  }

  void validate() const {
    gen.validate();
    probe.train.validate();
    sn.validate();
    lnl.validate();
    bias.validate();
    head.train.validate();
    if (std::abs(train_fraction + dev_fraction + test_fraction - 1.0) > 1e-9) {
      throw ConfigError("config: split fractions must sum to 1");
    }
    if (verification_pairs < 4) throw ConfigError("config: verification_pairs must be >= 4");
    if (fairness_repeats < 1) throw ConfigError("config: fairness.repeats must be >= 1");
    if (lnl_main_task != "gender" && lnl_main_task != "ethnicity" &&
        lnl_main_task != "identity") {
      throw ConfigError("config: lnl.main_task must be gender, ethnicity or identity");
    }
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline long long config_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as an integer");
  }
  return v;
}

inline double config_num(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (end == value.c_str() || *end != '\0') {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
  return v;
}

inline bool config_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a boolean");
}

inline std::vector<double> config_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  std::stringstream ss(value);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(config_num(key, tok));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

using ConfigSetter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, ConfigSetter>& config_registry() {
  static const std::map<std::string, ConfigSetter> registry = [] {
    std::map<std::string, ConfigSetter> reg;
    auto set_u64 = [](uint64_t ExperimentConfig::* field) {
      return [field](ExperimentConfig& c, const std::string& k, const std::string& v) {
        c.*field = static_cast<uint64_t>(config_int(k, v));
      };
    };
    reg["seed"] = set_u64(&ExperimentConfig::seed);
    reg["out_dir"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.out_dir = v;
    };
    reg["data_path"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.data_path = v;
    };
    reg["split.train"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.train_fraction = config_num(k, v);
    };
    reg["split.dev"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.dev_fraction = config_num(k, v);
    };
    reg["split.test"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.test_fraction = config_num(k, v);
    };
    reg["split.verification_pairs"] = [](ExperimentConfig& c, const std::string& k,
                                         const std::string& v) {
      c.verification_pairs = static_cast<int>(config_int(k, v));
    };

    reg["gen.num_identities"] = [](ExperimentConfig& c, const std::string& k,
                                   const std::string& v) {
      c.gen.num_identities = static_cast<int>(config_int(k, v));
    };
    reg["gen.images_per_identity"] = [](ExperimentConfig& c, const std::string& k,
                                        const std::string& v) {
      c.gen.images_per_identity = static_cast<int>(config_int(k, v));
    };
    reg["gen.embedding_dim"] = [](ExperimentConfig& c, const std::string& k,
                                  const std::string& v) {
      c.gen.embedding_dim = static_cast<int>(config_int(k, v));
    };
    reg["gen.identity_dim"] = [](ExperimentConfig& c, const std::string& k,
                                 const std::string& v) {
      c.gen.identity_dim = static_cast<int>(config_int(k, v));
    };
    reg["gen.emotion_dim"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.gen.emotion_dim = static_cast<int>(config_int(k, v));
    };
    reg["gen.identity_scale"] = [](ExperimentConfig& c, const std::string& k,
                                   const std::string& v) {
      c.gen.identity_scale = config_num(k, v);
    };
    reg["gen.emotion_scale"] = [](ExperimentConfig& c, const std::string& k,
                                  const std::string& v) {
      c.gen.emotion_scale = config_num(k, v);
    };
    reg["gen.emotion_jitter"] = [](ExperimentConfig& c, const std::string& k,
                                   const std::string& v) {
      c.gen.emotion_jitter = config_num(k, v);
    };
    reg["gen.gender_scale"] = [](ExperimentConfig& c, const std::string& k,
                                 const std::string& v) {
      c.gen.gender_scale = config_num(k, v);
    };
    reg["gen.ethnicity_scale"] = [](ExperimentConfig& c, const std::string& k,
                                    const std::string& v) {
      c.gen.ethnicity_scale = config_num(k, v);
    };
    reg["gen.attractive_scale"] = [](ExperimentConfig& c, const std::string& k,
                                     const std::string& v) {
      c.gen.attractive_scale = config_num(k, v);
    };
    reg["gen.smiling_scale"] = [](ExperimentConfig& c, const std::string& k,
                                  const std::string& v) {
      c.gen.smiling_scale = config_num(k, v);
    };
    reg["gen.smile_happy_corr"] = [](ExperimentConfig& c, const std::string& k,
                                     const std::string& v) {
      c.gen.smile_happy_corr = config_num(k, v);
    };
    reg["gen.noise_sigma"] = [](ExperimentConfig& c, const std::string& k,
                                const std::string& v) {
      c.gen.noise_sigma = config_num(k, v);
    };
    reg["gen.seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.gen.seed = static_cast<uint64_t>(config_int(k, v));
    };

    reg["probe.hidden"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.probe.mlp_hidden = static_cast<int>(config_int(k, v));
    };
    reg["probe.epochs"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.probe.train.epochs = static_cast<int>(config_int(k, v));
    };
    reg["probe.learning_rate"] = [](ExperimentConfig& c, const std::string& k,
                                    const std::string& v) {
      c.probe.train.learning_rate = config_num(k, v);
    };
    reg["probe.batch_size"] = [](ExperimentConfig& c, const std::string& k,
                                 const std::string& v) {
      c.probe.train.batch_size = static_cast<int>(config_int(k, v));
    };
    reg["probe.train_fraction"] = [](ExperimentConfig& c, const std::string& k,
                                     const std::string& v) {
      c.probe.train_fraction = config_num(k, v);
    };
    reg["probe.seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.probe.train.seed = static_cast<uint64_t>(config_int(k, v));
    };
    reg["probe.trees"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.probe.forest.num_trees = static_cast<int>(config_int(k, v));
    };
    reg["probe.tree_depth"] = [](ExperimentConfig& c, const std::string& k,
                                 const std::string& v) {
      c.probe.forest.max_depth = static_cast<int>(config_int(k, v));
    };

    auto reg_supp = [&reg](const std::string& prefix, SuppressionConfig ExperimentConfig::* block) {
      reg[prefix + ".epochs"] = [block](ExperimentConfig& c, const std::string& k,
                                        const std::string& v) {
        (c.*block).inner.epochs = static_cast<int>(config_int(k, v));
      };
      reg[prefix + ".learning_rate"] = [block](ExperimentConfig& c, const std::string& k,
                                               const std::string& v) {
        (c.*block).inner.learning_rate = config_num(k, v);
      };
      reg[prefix + ".batch_size"] = [block](ExperimentConfig& c, const std::string& k,
                                            const std::string& v) {
        (c.*block).inner.batch_size = static_cast<int>(config_int(k, v));
      };
      reg[prefix + ".seed"] = [block](ExperimentConfig& c, const std::string& k,
                                      const std::string& v) {
        (c.*block).inner.seed = static_cast<uint64_t>(config_int(k, v));
      };
    };
    reg_supp("sn", &ExperimentConfig::sn);
    reg_supp("lnl", &ExperimentConfig::lnl);

    reg["sn.outer_iterations"] = [](ExperimentConfig& c, const std::string& k,
                                    const std::string& v) {
      c.sn.outer_iterations = static_cast<int>(config_int(k, v));
    };
    reg["sn.adversary_epochs"] = [](ExperimentConfig& c, const std::string& k,
                                    const std::string& v) {
      c.sn.adversary_epochs = static_cast<int>(config_int(k, v));
    };
    reg["sn.adversary_hidden"] = [](ExperimentConfig& c, const std::string& k,
                                    const std::string& v) {
      c.sn.adversary_hidden = static_cast<int>(config_int(k, v));
    };
    reg["sn.triplets_per_iteration"] = [](ExperimentConfig& c, const std::string& k,
                                          const std::string& v) {
      c.sn.triplets_per_iteration = static_cast<int>(config_int(k, v));
    };
    reg["sn.margin"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.sn.triplet_margin = config_num(k, v);
    };
    reg["sn.delta_target"] = [](ExperimentConfig& c, const std::string& k,
                                const std::string& v) {
      c.sn.delta_target = config_num(k, v);
    };
    reg["sn.delta_weight"] = [](ExperimentConfig& c, const std::string& k,
                                const std::string& v) {
      c.sn.delta_weight = config_num(k, v);
    };
    reg["sn.init_noise"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.sn.init_noise = config_num(k, v);
    };
    reg["sn.random_init"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.sn.random_init = config_bool(k, v);
    };
    reg["sn.emotion_probe_ceiling"] = [](ExperimentConfig& c, const std::string& k,
                                         const std::string& v) {
      c.sn.emotion_probe_ceiling = config_num(k, v);
    };
    reg["sn.verification_floor"] = [](ExperimentConfig& c, const std::string& k,
                                      const std::string& v) {
      c.sn.verification_floor = config_num(k, v);
    };

    reg["lnl.lambda"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.lnl.lnl_lambda = config_num(k, v);
    };
    reg["lnl.reversal_scale"] = [](ExperimentConfig& c, const std::string& k,
                                   const std::string& v) {
      c.lnl.reversal_scale = config_num(k, v);
    };
    reg["lnl.train_epochs"] = [](ExperimentConfig& c, const std::string& k,
                                 const std::string& v) {
      c.lnl.lnl_epochs = static_cast<int>(config_int(k, v));
    };
    reg["lnl.encoder_width"] = [](ExperimentConfig& c, const std::string& k,
                                  const std::string& v) {
      c.lnl.lnl_encoder_width = static_cast<int>(config_int(k, v));
    };
    reg["lnl.main_task"] = [](ExperimentConfig& c, const std::string&, const std::string& v) {
      c.lnl_main_task = v;
    };

    reg["ablate.fractions"] = [](ExperimentConfig& c, const std::string& k,
                                 const std::string& v) {
      c.ablate.fractions = config_list(k, v);
    };
    reg["ablate.repeats"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.ablate.repeats = static_cast<int>(config_int(k, v));
    };

    reg["fairness.positive_smiling_rate"] = [](ExperimentConfig& c, const std::string& k,
                                               const std::string& v) {
      c.bias.positive_class_smiling_rate = config_num(k, v);
    };
    reg["fairness.negative_smiling_rate"] = [](ExperimentConfig& c, const std::string& k,
                                               const std::string& v) {
      c.bias.negative_class_smiling_rate = config_num(k, v);
    };
    reg["fairness.balance_gender"] = [](ExperimentConfig& c, const std::string& k,
                                        const std::string& v) {
      c.bias.balance_gender = config_bool(k, v);
    };
    reg["fairness.test_fraction"] = [](ExperimentConfig& c, const std::string& k,
                                       const std::string& v) {
      c.bias.test_fraction = config_num(k, v);
    };
    reg["fairness.seed"] = [](ExperimentConfig& c, const std::string& k, const std::string& v) {
      c.bias.seed = static_cast<uint64_t>(config_int(k, v));
    };
    reg["fairness.repeats"] = [](ExperimentConfig& c, const std::string& k,
                                 const std::string& v) {
      c.fairness_repeats = static_cast<int>(config_int(k, v));
    };
    reg["fairness.head_hidden"] = [](ExperimentConfig& c, const std::string& k,
                                     const std::string& v) {
      c.head.hidden = static_cast<int>(config_int(k, v));
    };
    reg["fairness.head_epochs"] = [](ExperimentConfig& c, const std::string& k,
                                     const std::string& v) {
      c.head.train.epochs = static_cast<int>(config_int(k, v));
    };
    reg["fairness.head_learning_rate"] = [](ExperimentConfig& c, const std::string& k,
                                            const std::string& v) {
      c.head.train.learning_rate = config_num(k, v);
    };
    reg["fairness.head_seed"] = [](ExperimentConfig& c, const std::string& k,
                                   const std::string& v) {
      c.head.train.seed = static_cast<uint64_t>(config_int(k, v));
    };
    reg["fairness.threshold"] = [](ExperimentConfig& c, const std::string& k,
                                   const std::string& v) {
      c.head.threshold = config_num(k, v);
    };
    return reg;
  }();
  return registry;
}

}  // namespace detail

inline void apply_config_key(ExperimentConfig& cfg, const std::string& key,
                             const std::string& value) {
  const auto& registry = detail::config_registry();
  const auto it = registry.find(key);
  if (it == registry.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

// Override string of the form key=value (the --set form).
inline void apply_config_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  }
  apply_config_key(cfg, detail::trim(assignment.substr(0, eq)),
                   detail::trim(assignment.substr(eq + 1)));
}

// Flat `key = value` file with dotted section prefixes; '#' starts a comment.
inline void load_config_file(ExperimentConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path + "'");
  std::string text;
  int line = 0;
  while (std::getline(is, text)) {
    ++line;
    const auto hash = text.find('#');
    if (hash != std::string::npos) text = text.substr(0, hash);
    text = detail::trim(text);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config file '" + path + "': line " + std::to_string(line) +
                        ": expected key = value");
    }
    apply_config_key(cfg, detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)));
  }
}

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> keys;
  for (const auto& [key, setter] : detail::config_registry()) keys.push_back(key);
  return keys;
}

}  // namespace blindrep
