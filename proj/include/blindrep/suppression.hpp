#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "blindrep/dataset.hpp"
#include "blindrep/errors.hpp"
#include "blindrep/losses.hpp"
#include "blindrep/net.hpp"
#include "blindrep/optim.hpp"

namespace blindrep {

enum class SuppressorKind { kSensitiveNets, kLearnNotToLearn };

inline const char* suppressor_kind_name(SuppressorKind k) {
  return k == SuppressorKind::kSensitiveNets ? "sn" : "lnl";
}

struct SnIterationStats {
  double triplet_loss = 0.0;
  double mean_delta = 0.0;
  double adversary_accuracy = 0.0;  // held-out emotion accuracy of that iteration's adversary
};

struct LnlEpochStats {
  double main_accuracy = 0.0;
  double emotion_accuracy = 0.0;
  double mean_posterior_entropy = 0.0;  // entropy of the held-out mean emotion posterior
};

// A trained blinding map. Immutable once trained; safe for concurrent
// read-only application.
struct Suppressor {
  SuppressorKind kind = SuppressorKind::kSensitiveNets;
  DenseNet network;
  std::vector<SnIterationStats> sn_history;
  std::vector<LnlEpochStats> lnl_history;

  size_t input_dim() const { return network.input_dim(); }
  size_t output_dim() const { return network.output_dim(); }
};

inline std::vector<double> suppress(const Suppressor& s, std::span<const double> x) {
  if (x.size() != s.input_dim()) {
    throw ShapeError("suppressor apply: input dimension " + std::to_string(x.size()) +
                     ", expected " + std::to_string(s.input_dim()));
  }
  ForwardPass fp = forward(s.network, Matrix::from_row(x));
  const Matrix& out = fp.output();
  return {out.row(0), out.row(0) + out.cols()};
}

inline Matrix suppress(const Suppressor& s, const Matrix& rows) {
  if (rows.cols() != s.input_dim()) {
    throw ShapeError("suppressor apply: input dimension " + std::to_string(rows.cols()) +
                     ", expected " + std::to_string(s.input_dim()));
  }
  return forward(s.network, rows).output();
}

// Neutral component of the emotion head's softmax output.
inline double neutral_probability(const DenseNet& emotion_head, std::span<const double> phi_x) {
  if (emotion_head.output_dim() != kNumEmotions ||
      emotion_head.layers().back().activation != Activation::kSoftmax) {
    throw ShapeError("neutral_probability: head must output a " + std::to_string(kNumEmotions) +
                     "-class softmax");
  }
  ForwardPass fp = forward(emotion_head, Matrix::from_row(phi_x));
  return fp.output()(0, static_cast<size_t>(kEmotionNeutral));
}

struct DeltaValue {
  double value = 0.0;
  double derivative = 0.0;  // w.r.t. p_neutral
};

// Delta = ln(1 + |target - p|). Zero exactly at p = target; the subderivative
// at the non-differentiable point is taken as 0.
inline DeltaValue delta_regularizer(double p_neutral, double target = 0.9) {
  if (!(p_neutral >= 0.0 && p_neutral <= 1.0)) {
    throw ArgumentError("delta_regularizer: p_neutral " + std::to_string(p_neutral) +
                        " outside [0, 1]");
  }
  DeltaValue out;
  const double gap = target - p_neutral;
  out.value = std::log1p(std::abs(gap));
  if (gap > 0.0) {
    out.derivative = -1.0 / (1.0 + gap);
  } else if (gap < 0.0) {
    out.derivative = 1.0 / (1.0 - gap);
  }
  return out;
}

struct SuppressionConfig {
  int outer_iterations = 8;       // R
  int adversary_epochs = 20;      // emotion-head retraining per iteration
  int adversary_hidden = 0;       // 0 -> linear softmax head
  double adversary_learning_rate = 0.01;
  double adversary_weight_decay = 3.0;  // keeps the head off spurious coordinates
  // After training, first-layer head weights below this fraction of their
  // row maximum are zeroed. The Delta pull then acts only along coordinates
  // the head genuinely reads, not its residual overfit.
  double adversary_weight_floor = 0.25;
  int triplets_per_iteration = 2048;
  double triplet_margin = 0.2;
  double delta_target = 0.9;
  double delta_weight = 1.0;
  double lnl_lambda = 1.0;        // entropy-proxy weight in Eq-style LnL loss
  double reversal_scale = 1.0;    // mu
  double emotion_probe_ceiling = 0.35;  // stop once adversary accuracy <= ceiling (0 = off)
  double verification_floor = 0.0;     // stop once held-out triplet satisfaction < floor (0 = off)
  double init_noise = 0.01;       // near-identity init perturbation of the suppressor
  bool random_init = false;
  // Keeping the suppressor purely linear (biases pinned at zero) denies the
  // training the degenerate escape of shifting every embedding by a common
  // offset, which fools no retrained adversary but ruins cosine geometry.
  bool train_suppressor_bias = false;
  int lnl_epochs = 30;
  int lnl_encoder_width = 0;      // 0 -> input dim
  TrainConfig inner;              // suppressor-step optimizer; epochs = passes per iteration

  SuppressionConfig() {
    inner.epochs = 2;
  }

  void validate() const {
    if (outer_iterations < 1) throw ConfigError("suppression config: outer_iterations must be >= 1");
    if (adversary_epochs < 0) throw ConfigError("suppression config: adversary_epochs must be >= 0");
    if (!(delta_target > 0.0 && delta_target <= 1.0)) {
      throw ConfigError("suppression config: delta_target must be in (0, 1]");
    }
    if (triplet_margin < 0.0) throw ConfigError("suppression config: triplet_margin must be >= 0");
    if (delta_weight < 0.0) throw ConfigError("suppression config: delta_weight must be >= 0");
    if (lnl_lambda < 0.0) throw ConfigError("suppression config: lnl_lambda must be >= 0");
    if (reversal_scale < 0.0) throw ConfigError("suppression config: reversal_scale must be >= 0");
    if (triplets_per_iteration < 1) {
      throw ConfigError("suppression config: triplets_per_iteration must be >= 1");
    }
    if (lnl_epochs < 0) throw ConfigError("suppression config: lnl_epochs must be >= 0");
    inner.validate();
  }
};

namespace detail {

struct FeatureStats {
  std::vector<double> mean, sigma;
};

inline FeatureStats feature_stats(const Matrix& inputs) {
  FeatureStats st;
  const size_t dim = inputs.cols();
  st.mean.assign(dim, 0.0);
  st.sigma.assign(dim, 0.0);
  for (size_t r = 0; r < inputs.rows(); ++r) {
    for (size_t c = 0; c < dim; ++c) st.mean[c] += inputs(r, c);
  }
  for (double& m : st.mean) m /= static_cast<double>(inputs.rows());
  for (size_t r = 0; r < inputs.rows(); ++r) {
    for (size_t c = 0; c < dim; ++c) {
      const double d = inputs(r, c) - st.mean[c];
      st.sigma[c] += d * d;
    }
  }
  for (double& s : st.sigma) {
    s = std::max(std::sqrt(s / static_cast<double>(inputs.rows())), 1e-6);
  }
  return st;
}

// Trains a fresh emotion head on standardized features and folds the affine
// standardization back into its first layer. The statistics are fixed by the
// caller (from the unsuppressed embeddings), so the head stays conditioned
// without handing the suppressor a renormalization treadmill to race against.
inline DenseNet train_standardized_head(const Matrix& inputs, std::span<const int> labels,
                                        const FeatureStats& st, int hidden, double weight_floor,
                                        const TrainConfig& cfg, Rng& init_rng) {
  const size_t dim = inputs.cols();
  const std::vector<double>& mean = st.mean;
  const std::vector<double>& sigma = st.sigma;

  Matrix z = inputs;
  for (size_t r = 0; r < z.rows(); ++r) {
    for (size_t c = 0; c < dim; ++c) z(r, c) = (z(r, c) - mean[c]) / sigma[c];
  }

  std::vector<LayerSpec> specs;
  if (hidden > 0) specs.push_back({static_cast<size_t>(hidden), Activation::kRelu});
  specs.push_back({kNumEmotions, Activation::kSoftmax});
  DenseNet head = DenseNet::glorot("w_3", dim, specs, init_rng);
  if (cfg.epochs > 0) train_softmax_classifier(head, z, labels, cfg);

  Layer& first = head.mutable_layers().front();
  if (weight_floor > 0.0) {
    for (size_t i = 0; i < first.out_dim(); ++i) {
      double row_max = 0.0;
      for (size_t j = 0; j < dim; ++j) row_max = std::max(row_max, std::abs(first.weight(i, j)));
      const double cut = weight_floor * row_max;
      for (size_t j = 0; j < dim; ++j) {
        if (std::abs(first.weight(i, j)) < cut) first.weight(i, j) = 0.0;
      }
    }
  }
  for (size_t i = 0; i < first.out_dim(); ++i) {
    double shift = 0.0;
    for (size_t j = 0; j < dim; ++j) {
      first.weight(i, j) /= sigma[j];
      shift += first.weight(i, j) * mean[j];
    }
    first.bias[i] -= shift;
  }
  return head;
}

// Fraction of triplets whose hinge is inactive under the map `net`, on the
// same normalized footing as the trainer.
inline double triplet_satisfaction(const DenseNet& net, const Dataset& ds,
                                   std::span<const Triplet> triplets, double margin) {
  size_t ok = 0;
  for (const Triplet& t : triplets) {
    Matrix batch(3, net.input_dim());
    std::copy(ds.samples[t.anchor].embedding.begin(), ds.samples[t.anchor].embedding.end(),
              batch.row(0));
    std::copy(ds.samples[t.positive].embedding.begin(), ds.samples[t.positive].embedding.end(),
              batch.row(1));
    std::copy(ds.samples[t.negative].embedding.begin(), ds.samples[t.negative].embedding.end(),
              batch.row(2));
    Matrix phi = forward(net, batch).output();
    for (size_t r = 0; r < 3; ++r) {
      const double nrm = std::max(l2_norm(phi.row_span(r)), 1e-12);
      for (size_t c = 0; c < phi.cols(); ++c) phi(r, c) /= nrm;
    }
    if (squared_distance(phi.row_span(0), phi.row_span(1)) -
            squared_distance(phi.row_span(0), phi.row_span(2)) + margin <=
        0.0) {
      ++ok;
    }
  }
  return triplets.empty() ? 1.0 : static_cast<double>(ok) / static_cast<double>(triplets.size());
}

}  // namespace detail

// SensitiveNets-style adversarial suppression. Per outer iteration:
//   (a) retrain a fresh emotion head on {phi(x), emotion} pairs from `se`;
//   (b) update the suppressor on triplets from `sp` against
//       triplet loss + mean Delta(A) + mean Delta(P) + mean Delta(N)
//       computed through the frozen head.
inline Suppressor train_sensitivenets(const Dataset& sp, const Dataset& se,
                                      const SuppressionConfig& cfg) {
  cfg.validate();
  if (sp.samples.empty()) throw DataError("train_sensitivenets: empty triplet dataset (sp)");
  if (se.samples.empty()) throw DataError("train_sensitivenets: empty emotion dataset (se)");
  if (sp.dim() != se.dim()) {
    throw ShapeError("train_sensitivenets: sp dimension " + std::to_string(sp.dim()) +
                     " != se dimension " + std::to_string(se.dim()));
  }
  const size_t dim = static_cast<size_t>(sp.dim());

  // Suppressor: three square linear layers, near-identity by default so the
  // initial map preserves utility.
  DenseNet w_e = DenseNet::identity_stack("w_E", dim, 3);
  {
    Rng init_rng(sub_seed(cfg.inner.seed, 11));
    if (cfg.random_init) {
      std::vector<LayerSpec> specs(3, LayerSpec{dim, Activation::kLinear});
      w_e = DenseNet::glorot("w_E", dim, specs, init_rng);
    } else if (cfg.init_noise > 0.0) {
      for (Layer& l : w_e.mutable_layers()) {
        for (double& w : l.weight.data()) w += init_rng.uniform(-cfg.init_noise, cfg.init_noise);
      }
    }
  }

  // Adversary data: one fixed 80/20 split of se for held-out accuracy.
  const auto se_x = embeddings_of(se);
  const auto se_y = labels_of(se, tasks::emotion());
  std::vector<size_t> se_idx(se.size());
  std::iota(se_idx.begin(), se_idx.end(), size_t{0});
  {
    Rng split_rng(sub_seed(cfg.inner.seed, 12));
    split_rng.shuffle(se_idx);
  }
  const size_t n_tr = std::max<size_t>(1, se.size() * 8 / 10);
  std::vector<size_t> adv_train(se_idx.begin(), se_idx.begin() + static_cast<long>(n_tr));
  std::vector<size_t> adv_held(se_idx.begin() + static_cast<long>(n_tr), se_idx.end());
  if (adv_held.empty()) adv_held = adv_train;  // degenerate tiny sets

  // Held-out triplets for the verification-floor stop rule.
  std::vector<Triplet> floor_triplets;
  if (cfg.verification_floor > 0.0) {
    floor_triplets = sample_triplets(sp, 256, sub_seed(cfg.inner.seed, 13));
  }

  auto gather = [&](std::span<const size_t> idx, const Matrix& from) {
    Matrix out(idx.size(), from.cols());
    for (size_t r = 0; r < idx.size(); ++r) {
      std::copy(from.row(idx[r]), from.row(idx[r]) + from.cols(), out.row(r));
    }
    return out;
  };
  auto gather_labels = [&](std::span<const size_t> idx) {
    std::vector<int> out(idx.size());
    for (size_t r = 0; r < idx.size(); ++r) out[r] = se_y[idx[r]];
    return out;
  };
  const Matrix adv_train_x = gather(adv_train, se_x);
  const Matrix adv_held_x = gather(adv_held, se_x);
  const std::vector<int> adv_train_y = gather_labels(adv_train);
  const std::vector<int> adv_held_y = gather_labels(adv_held);

  const Matrix sp_x = embeddings_of(sp);
  const size_t bs = static_cast<size_t>(cfg.inner.batch_size);

  // Head standardization statistics come from the unsuppressed embeddings
  // once and stay fixed across iterations.
  const detail::FeatureStats head_stats = detail::feature_stats(adv_train_x);

  Suppressor out;
  out.kind = SuppressorKind::kSensitiveNets;
  AdamState state = AdamState::for_net(w_e);

  for (int iter = 0; iter < cfg.outer_iterations; ++iter) {
    // (a) fresh adversary on the current blinded embeddings
    Rng adv_rng(sub_seed(cfg.inner.seed, 100 + static_cast<uint64_t>(iter)));
    TrainConfig adv_cfg = cfg.inner;
    adv_cfg.epochs = cfg.adversary_epochs;
    adv_cfg.learning_rate = cfg.adversary_learning_rate;
    adv_cfg.weight_decay = cfg.adversary_weight_decay;
    adv_cfg.epsilon = 1e-8;  // plain Adam for the head whatever the suppressor uses
    adv_cfg.seed = sub_seed(cfg.inner.seed, 200 + static_cast<uint64_t>(iter));
    const Matrix phi_train = forward(w_e, adv_train_x).output();
    DenseNet w_3 =
        detail::train_standardized_head(phi_train, adv_train_y, head_stats,
                                        cfg.adversary_hidden, cfg.adversary_weight_floor,
                                        adv_cfg, adv_rng);
    const double adv_acc =
        classification_accuracy(w_3, forward(w_e, adv_held_x).output(), adv_held_y);

    // (b) suppressor step against the frozen head
    const std::vector<Triplet> triplets = sample_triplets(
        sp, static_cast<size_t>(cfg.triplets_per_iteration),
        sub_seed(cfg.inner.seed, 300 + static_cast<uint64_t>(iter)));
    Rng order_rng(sub_seed(cfg.inner.seed, 400 + static_cast<uint64_t>(iter)));
    std::vector<size_t> order(triplets.size());
    std::iota(order.begin(), order.end(), size_t{0});

    double epoch_triplet_loss = 0.0;
    double epoch_delta = 0.0;
    size_t epoch_batches = 0;

    for (int epoch = 0; epoch < cfg.inner.epochs; ++epoch) {
      order_rng.shuffle(order);
      const bool last_epoch = epoch == cfg.inner.epochs - 1;
      if (last_epoch) {
        epoch_triplet_loss = 0.0;
        epoch_delta = 0.0;
        epoch_batches = 0;
      }
      for (size_t start = 0; start < order.size(); start += bs) {
        const size_t b = std::min(bs, order.size() - start);
        Matrix xa(b, dim), xp(b, dim), xn(b, dim);
        for (size_t r = 0; r < b; ++r) {
          const Triplet& t = triplets[order[start + r]];
          std::copy(sp_x.row(t.anchor), sp_x.row(t.anchor) + dim, xa.row(r));
          std::copy(sp_x.row(t.positive), sp_x.row(t.positive) + dim, xp.row(r));
          std::copy(sp_x.row(t.negative), sp_x.row(t.negative) + dim, xn.row(r));
        }
        ForwardPass fa = forward(w_e, xa);
        ForwardPass fp = forward(w_e, xp);
        ForwardPass fn = forward(w_e, xn);

        // The cited face triplet loss reads L2-normalized embeddings; the
        // margin is then a fraction of the fixed [0, 4] squared-distance
        // range, so the hinge activates as soon as identity geometry starts
        // to degrade.
        const double inv_b = 1.0 / static_cast<double>(b);
        Matrix ga(b, dim), gp(b, dim), gn(b, dim);
        double batch_triplet = 0.0;
        size_t active = 0;
        std::vector<double> ua(dim), up(dim), un(dim);
        std::vector<double> norms(3, 0.0);
        for (size_t r = 0; r < b; ++r) {
          const Matrix* outs[3] = {&fa.output(), &fp.output(), &fn.output()};
          std::vector<double>* units[3] = {&ua, &up, &un};
          for (int t3 = 0; t3 < 3; ++t3) {
            const double* row = outs[t3]->row(r);
            double nrm = l2_norm({row, dim});
            if (nrm < 1e-12) {
              throw NumericError("train_sensitivenets: zero-norm embedding at iteration " +
                                 std::to_string(iter));
            }
            norms[static_cast<size_t>(t3)] = nrm;
            for (size_t c = 0; c < dim; ++c) (*units[t3])[c] = row[c] / nrm;
          }
          const TripletResult tr = triplet_loss(ua, up, un, cfg.triplet_margin);
          batch_triplet += tr.loss;
          if (tr.loss > 0.0) ++active;
          // Chain through the normalization: g_v = (g_u - (g_u . u) u) / |v|.
          Matrix* grads3[3] = {&ga, &gp, &gn};
          const std::vector<double>* unit_grads[3] = {&tr.grad_anchor, &tr.grad_positive,
                                                      &tr.grad_negative};
          for (int t3 = 0; t3 < 3; ++t3) {
            const std::vector<double>& gu = *unit_grads[t3];
            const std::vector<double>& u = *units[t3];
            const double proj = dot(gu, u);
            double* out = grads3[t3]->row(r);
            for (size_t c = 0; c < dim; ++c) {
              out[c] = (gu[c] - proj * u[c]) / norms[static_cast<size_t>(t3)];
            }
          }
        }
        batch_triplet *= inv_b;
        // Hard-triplet weighting as in the cited face training: the utility
        // gradient averages over the violating triplets, not the whole batch,
        // so it keeps full authority however rare violations become.
        const double triplet_scale = active > 0 ? 1.0 / static_cast<double>(active) : 0.0;
        for (Matrix* m : {&ga, &gp, &gn}) {
          for (double& v : m->data()) v *= triplet_scale;
        }

        double batch_delta = 0.0;
        if (cfg.delta_weight > 0.0) {
          ForwardPass* passes[3] = {&fa, &fp, &fn};
          Matrix* grads[3] = {&ga, &gp, &gn};
          for (int t3 = 0; t3 < 3; ++t3) {
            ForwardPass hp = forward(w_3, passes[t3]->output());
            Matrix seed(b, kNumEmotions);
            for (size_t r = 0; r < b; ++r) {
              const DeltaValue dv =
                  delta_regularizer(hp.output()(r, kEmotionNeutral), cfg.delta_target);
              batch_delta += dv.value;
              seed(r, kEmotionNeutral) = dv.derivative * cfg.delta_weight * inv_b;
            }
            Gradients hg = backward(w_3, hp, seed, GradSeed::kOutput);
            auto& acc = grads[t3]->data();
            const auto& add = hg.input.data();
            for (size_t k = 0; k < acc.size(); ++k) acc[k] += add[k];
          }
          batch_delta *= inv_b / 3.0;
        }

        Gradients g = backward(w_e, fa, ga);
        accumulate(g, backward(w_e, fp, gp));
        accumulate(g, backward(w_e, fn, gn));
        if (!cfg.train_suppressor_bias) {
          for (auto& bias_grad : g.bias) std::fill(bias_grad.begin(), bias_grad.end(), 0.0);
        }
        if (!std::isfinite(batch_triplet + batch_delta) || !g.all_finite()) {
          throw NumericError("train_sensitivenets: non-finite loss at iteration " +
                             std::to_string(iter));
        }
        adam_update(w_e, g, state, cfg.inner);

        if (last_epoch) {
          epoch_triplet_loss += batch_triplet;
          epoch_delta += batch_delta;
          ++epoch_batches;
        }
      }
    }

    SnIterationStats stats;
    stats.triplet_loss = epoch_batches ? epoch_triplet_loss / static_cast<double>(epoch_batches)
                                       : 0.0;
    stats.mean_delta = epoch_batches ? epoch_delta / static_cast<double>(epoch_batches) : 0.0;
    stats.adversary_accuracy = adv_acc;
    out.sn_history.push_back(stats);

    if (cfg.emotion_probe_ceiling > 0.0 && adv_acc <= cfg.emotion_probe_ceiling) break;
    if (cfg.verification_floor > 0.0 &&
        detail::triplet_satisfaction(w_e, sp, floor_triplets, cfg.triplet_margin) <
            cfg.verification_floor) {
      break;
    }
  }

  out.network = std::move(w_e);
  return out;
}

// Encoder gradient assembly for Learning not to Learn: main-task gradient,
// emotion gradient through the reversal, and the entropy proxy scaled by
// lambda. This is the single wiring point the trainer uses.
inline Matrix combine_encoder_gradient(const Matrix& g_main, const Matrix& g_emotion,
                                       const Matrix& g_entropy, double mu, double lambda) {
  if (!g_main.same_shape(g_emotion) || !g_main.same_shape(g_entropy)) {
    throw ShapeError("combine_encoder_gradient: branch gradients have different shapes");
  }
  Matrix out = gradient_reversal(g_emotion, mu);
  for (size_t k = 0; k < out.size(); ++k) {
    out.data()[k] += g_main.data()[k] + lambda * g_entropy.data()[k];
  }
  return out;
}

// Learning-not-to-Learn retraining: an encoder over x feeds a main-task head
// and an emotion head. The emotion head trains normally on detached features;
// the encoder receives the main-task gradient, the reversed emotion gradient
// and lambda times the gradient of the negative posterior entropy.
inline Suppressor train_lnl(const Dataset& train, const TaskSpec& main_task,
                            const SuppressionConfig& cfg) {
  cfg.validate();
  if (train.samples.empty()) throw DataError("train_lnl: empty training set");
  if (main_task.name == "verification" || main_task.k < 0) {
    throw ConfigError(
        "train_lnl: verification is unsupported as the main task (the method needs a "
        "closed set of classes); use identity, gender or ethnicity");
  }
  if (main_task.k != 0 && main_task.k != 1 && main_task.k != 2) {
    throw ConfigError("train_lnl: main task must be identity, gender or ethnicity");
  }
  const size_t dim = static_cast<size_t>(train.dim());
  const size_t width = cfg.lnl_encoder_width > 0 ? static_cast<size_t>(cfg.lnl_encoder_width) : dim;

  const Matrix all_x = embeddings_of(train);
  const std::vector<int> y_main = labels_of(train, main_task);
  const std::vector<int> y_emo = labels_of(train, tasks::emotion());

  // 80/20 held-out split for the per-epoch history.
  std::vector<size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  {
    Rng split_rng(sub_seed(cfg.inner.seed, 21));
    split_rng.shuffle(idx);
  }
  const size_t n_tr = std::max<size_t>(1, train.size() * 8 / 10);
  std::vector<size_t> tr_idx(idx.begin(), idx.begin() + static_cast<long>(n_tr));
  std::vector<size_t> held_idx(idx.begin() + static_cast<long>(n_tr), idx.end());
  if (held_idx.empty()) held_idx = tr_idx;

  auto gather = [&](std::span<const size_t> which, const Matrix& from) {
    Matrix out(which.size(), from.cols());
    for (size_t r = 0; r < which.size(); ++r) {
      std::copy(from.row(which[r]), from.row(which[r]) + from.cols(), out.row(r));
    }
    return out;
  };
  auto gather_int = [&](std::span<const size_t> which, const std::vector<int>& from) {
    std::vector<int> out(which.size());
    for (size_t r = 0; r < which.size(); ++r) out[r] = from[which[r]];
    return out;
  };
  const Matrix x_tr = gather(tr_idx, all_x);
  const Matrix x_held = gather(held_idx, all_x);
  const std::vector<int> main_tr = gather_int(tr_idx, y_main);
  const std::vector<int> main_held = gather_int(held_idx, y_main);
  const std::vector<int> emo_tr = gather_int(tr_idx, y_emo);
  const std::vector<int> emo_held = gather_int(held_idx, y_emo);

  Rng init_rng(sub_seed(cfg.inner.seed, 22));
  std::vector<LayerSpec> enc_specs{{width, Activation::kRelu}, {width, Activation::kLinear}};
  DenseNet encoder = DenseNet::glorot("lnl-encoder", dim, enc_specs, init_rng);
  std::vector<LayerSpec> main_specs{{static_cast<size_t>(main_task.num_classes),
                                     Activation::kSoftmax}};
  DenseNet main_head = DenseNet::glorot("w_k", width, main_specs, init_rng);
  std::vector<LayerSpec> emo_specs{{kNumEmotions, Activation::kSoftmax}};
  DenseNet emo_head = DenseNet::glorot("w_3", width, emo_specs, init_rng);

  AdamState enc_state = AdamState::for_net(encoder);
  AdamState main_state = AdamState::for_net(main_head);
  AdamState emo_state = AdamState::for_net(emo_head);

  Rng order_rng(sub_seed(cfg.inner.seed, 23));
  std::vector<size_t> order(x_tr.rows());
  std::iota(order.begin(), order.end(), size_t{0});
  const size_t bs = static_cast<size_t>(cfg.inner.batch_size);

  Suppressor out;
  out.kind = SuppressorKind::kLearnNotToLearn;

  for (int epoch = 0; epoch < cfg.lnl_epochs; ++epoch) {
    order_rng.shuffle(order);
    for (size_t start = 0; start < order.size(); start += bs) {
      const size_t b = std::min(bs, order.size() - start);
      Matrix xb(b, dim);
      std::vector<int> yb_main(b), yb_emo(b);
      for (size_t r = 0; r < b; ++r) {
        const size_t i = order[start + r];
        std::copy(x_tr.row(i), x_tr.row(i) + dim, xb.row(r));
        yb_main[r] = main_tr[i];
        yb_emo[r] = emo_tr[i];
      }
      const double inv_b = 1.0 / static_cast<double>(b);

      ForwardPass fe = forward(encoder, xb);
      const Matrix& feats = fe.output();

      // Main branch: cross-entropy, head updated, gradient kept for the encoder.
      ForwardPass fm = forward(main_head, feats);
      Matrix gm = fm.output();
      for (size_t r = 0; r < b; ++r) gm(r, static_cast<size_t>(yb_main[r])) -= 1.0;
      for (double& v : gm.data()) v *= inv_b;
      Gradients main_grads = backward(main_head, fm, gm, GradSeed::kFinalPreactivation);

      // Emotion branch: normal cross-entropy training of the head on detached
      // features; the input gradient feeds the reversal.
      ForwardPass fh = forward(emo_head, feats);
      Matrix ge = fh.output();
      for (size_t r = 0; r < b; ++r) ge(r, static_cast<size_t>(yb_emo[r])) -= 1.0;
      for (double& v : ge.data()) v *= inv_b;
      Gradients emo_grads = backward(emo_head, fh, ge, GradSeed::kFinalPreactivation);

      // Mutual-information proxy: negative entropy of the emotion posterior,
      // pushed through the (frozen) head only into the encoder.
      Matrix gh(b, kNumEmotions);
      for (size_t r = 0; r < b; ++r) {
        for (size_t c = 0; c < kNumEmotions; ++c) {
          const double p = std::max(fh.output()(r, c), 1e-12);
          gh(r, c) = (std::log(p) + 1.0) * inv_b;
        }
      }
      Gradients entropy_grads = backward(emo_head, fh, gh, GradSeed::kOutput);

      Matrix enc_seed = combine_encoder_gradient(main_grads.input, emo_grads.input,
                                                 entropy_grads.input, cfg.reversal_scale,
                                                 cfg.lnl_lambda);
      Gradients enc_grads = backward(encoder, fe, enc_seed);

      if (!enc_grads.all_finite() || !main_grads.all_finite() || !emo_grads.all_finite()) {
        throw NumericError("train_lnl: non-finite gradient at epoch " + std::to_string(epoch));
      }
      adam_update(main_head, main_grads, main_state, cfg.inner);
      adam_update(emo_head, emo_grads, emo_state, cfg.inner);
      adam_update(encoder, enc_grads, enc_state, cfg.inner);
    }

    // Epoch history on the held-out part.
    const Matrix feats_held = forward(encoder, x_held).output();
    LnlEpochStats stats;
    stats.main_accuracy = classification_accuracy(main_head, feats_held, main_held);
    stats.emotion_accuracy = classification_accuracy(emo_head, feats_held, emo_held);
    const Matrix posterior = forward(emo_head, feats_held).output();
    std::vector<double> mean(kNumEmotions, 0.0);
    for (size_t r = 0; r < posterior.rows(); ++r) {
      for (size_t c = 0; c < kNumEmotions; ++c) mean[c] += posterior(r, c);
    }
    double entropy = 0.0;
    for (double& m : mean) {
      m /= static_cast<double>(posterior.rows());
      entropy -= m * std::log(std::max(m, 1e-12));
    }
    stats.mean_posterior_entropy = entropy;
    out.lnl_history.push_back(stats);
  }

  out.network = std::move(encoder);
  return out;
}

// Suppressor files reuse the network format behind a one-line kind header.
inline void save_suppressor(const Suppressor& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "suppressor 1 kind=" << suppressor_kind_name(s.kind) << "\n";
  save_network(s.network, os);
  if (!os) throw DataError("failed while writing '" + path + "'");
}

inline Suppressor load_suppressor(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open suppressor file '" + path + "'");
  std::string text;
  if (!std::getline(is, text)) throw ParseError("suppressor file: line 1: empty file");
  const auto toks = detail::split_ws(text);
  if (toks.size() != 3 || toks[0] != "suppressor" || toks[1] != "1" ||
      toks[2].rfind("kind=", 0) != 0) {
    throw ParseError("suppressor file: line 1: expected 'suppressor 1 kind=<sn|lnl>'");
  }
  Suppressor s;
  const std::string kind = toks[2].substr(5);
  if (kind == "sn") {
    s.kind = SuppressorKind::kSensitiveNets;
  } else if (kind == "lnl") {
    s.kind = SuppressorKind::kLearnNotToLearn;
  } else {
    throw ParseError("suppressor file: line 1: unknown kind '" + kind + "'");
  }
  int line = 1;
  s.network = load_network(is, line);
  return s;
}

}  // namespace blindrep
