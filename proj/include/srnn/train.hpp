#pragma once

#include <cmath>
#include <cstdlib>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "srnn/data.hpp"
#include "srnn/model.hpp"

namespace srnn {

enum class Head { single, ens_logit, ens_prob, srnn_vanilla, srnn_halfgru };

inline const char* head_name(Head h) {
  switch (h) {
    case Head::single: return "single";
    case Head::ens_logit: return "ens_logit";
    case Head::ens_prob: return "ens_prob";
    case Head::srnn_vanilla: return "srnn_vanilla";
    default: return "srnn_halfgru";
  }
}

inline Head head_from_string(const std::string& s) {
  if (s == "single") return Head::single;
  if (s == "ens_logit") return Head::ens_logit;
  if (s == "ens_prob") return Head::ens_prob;
  if (s == "srnn_vanilla") return Head::srnn_vanilla;
  if (s == "srnn_halfgru") return Head::srnn_halfgru;
  throw ConfigError("unknown head '" + s + "'");
}

struct TrainConfig {
  double lr0 = 0.001;
  double momentum = 0.9;
  bool nesterov = true;
  double weight_decay = 1e-4;
  std::size_t decay_every = 15;
  double decay_factor = 0.1;
  std::size_t epochs = 35;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
  std::vector<Size2d> scales = {{16, 16}, {32, 32}, {64, 64}};
  Head head = Head::srnn_vanilla;
  std::size_t pretrain_epochs = 10;
  bool augment = true;
  // Pretraining-only: swap pad-and-crop for the scale-jittered crop so the
  // base tolerates inputs above its native scale.
  bool scale_crop = false;

  void validate() const {
    if (!(lr0 > 0)) throw ConfigError("lr0 must be > 0");
    if (momentum < 0 || momentum >= 1)
      throw ConfigError("momentum must be in [0, 1)");
    if (!(decay_factor > 0 && decay_factor < 1))
      throw ConfigError("decay_factor must be in (0, 1)");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (decay_every < 1) throw ConfigError("decay_every must be >= 1");
    if (scales.empty()) throw ConfigError("scales must be non-empty");
  }
};

// lr0 * factor^floor(epoch / every); piecewise constant, non-increasing.
inline double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  double lr = cfg.lr0;
  for (std::size_t k = 0; k < epoch / cfg.decay_every; ++k)
    lr *= cfg.decay_factor;
  return lr;
}

// ---------------------------------------------------------------------------
// SGD with (simplified) Nesterov momentum and coupled L2 weight decay.
// Decay applies to weight matrices and kernels only, never biases.
// ---------------------------------------------------------------------------

template <typename T>
struct SgdNesterov {
  std::vector<Tensor<T>> velocity;

  template <typename P>
  void init(const std::vector<P>& params) {
    velocity.clear();
    for (const auto& p : params) velocity.emplace_back(p.node->value.shape);
  }

  template <typename P>
  void step(const std::vector<P>& params, double lr, const TrainConfig& cfg) {
    if (velocity.size() != params.size())
      throw ContractError("sgd step: state/param count mismatch");
    const T mu = static_cast<T>(cfg.momentum);
    const T eta = static_cast<T>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params[i].node->value;
      const Tensor<T>& g = params[i].node->grad;
      Tensor<T>& v = velocity[i];
      if (!p.same_shape(g) || !p.same_shape(v))
        throw ContractError("sgd step: shape mismatch for " + params[i].name);
      const T wd = params[i].decay ? static_cast<T>(cfg.weight_decay) : T(0);
      for (std::size_t j = 0; j < p.size(); ++j) {
        const T gp = g[j] + wd * p[j];
        v[j] = mu * v[j] + gp;
        const T d = cfg.nesterov ? gp + mu * v[j] : v[j];
        p[j] -= eta * d;
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Augmentation: reflect pad by 4, random crop back, coin-flip mirror.
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t reflect_index(long i, long n) {
  if (i < 0) i = -i;
  if (i >= n) i = 2 * n - 2 - i;
  return static_cast<std::size_t>(i);
}

}  // namespace detail

// Deterministic core: crop offset in [0, 2*pad] per axis; (pad, pad) with no
// flip reproduces the input.
template <typename T>
Image<T> augment_with(const Image<T>& img, std::size_t off_y,
                      std::size_t off_x, bool flip, std::size_t pad = 4) {
  const std::size_t c = img.channels(), h = img.height(), w = img.width();
  Image<T> out(c, h, w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const long sy = static_cast<long>(y + off_y) - static_cast<long>(pad);
        const std::size_t xx = flip ? w - 1 - x : x;
        const long sx = static_cast<long>(xx + off_x) - static_cast<long>(pad);
        out.at(ch, y, x) = img.at(ch, detail::reflect_index(sy, h),
                                  detail::reflect_index(sx, w));
      }
  return out;
}

template <typename T>
Image<T> augment(const Image<T>& img, Rng& rng, std::size_t pad = 4) {
  const std::size_t off_y = rng.index(2 * pad + 1);
  const std::size_t off_x = rng.index(2 * pad + 1);
  const bool flip = rng.bernoulli(0.5);
  return augment_with(img, off_y, off_x, flip, pad);
}

// Scale-jittered crop in the style of the stock ImageNet input pipeline:
// a random window of 1/16..1 of the source area (aspect 3/4..4/3), later
// resized to the training scale. Pretraining with this is what makes the
// base network usable on pyramid levels above its native size; plain
// pad-and-crop cannot provide that.
template <typename T>
Image<T> random_resized_crop(const Image<T>& img, Rng& rng,
                             double max_zoom = 4.0) {
  const std::size_t h = img.height(), w = img.width();
  // uniform in linear zoom, so strong magnifications are well represented
  const double zoom = rng.uniform(1.0, max_zoom);
  const double area = 1.0 / (zoom * zoom);
  const double aspect = rng.uniform(0.75, 4.0 / 3.0);
  std::size_t ch = std::min<std::size_t>(
      h, std::max<std::size_t>(
             1, static_cast<std::size_t>(
                    std::lround(std::sqrt(area * h * w / aspect)))));
  std::size_t cw = std::min<std::size_t>(
      w, std::max<std::size_t>(
             1, static_cast<std::size_t>(
                    std::lround(std::sqrt(area * h * w * aspect)))));
  const std::size_t top = rng.index(h - ch + 1);
  const std::size_t left = rng.index(w - cw + 1);
  const bool flip = rng.bernoulli(0.5);
  Image<T> out(img.channels(), ch, cw);
  for (std::size_t c = 0; c < img.channels(); ++c)
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x)
        out.at(c, y, x) =
            img.at(c, top + y, left + (flip ? cw - 1 - x : x));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  double top1_error;  // percent
  double top5_error;  // percent
};

inline std::size_t thread_cap() {
  const char* env = std::getenv("SRNN_THREADS");
  if (!env) return 1;
  const long v = std::atol(env);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

// Ties rank by lower class index.
template <typename T>
bool label_in_top_k(const T* row, std::size_t classes, std::size_t label,
                    std::size_t k) {
  std::size_t rank = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (row[c] > row[label] || (row[c] == row[label] && c < label)) ++rank;
    if (rank >= k) return false;
  }
  return true;
}

template <typename T>
PyramidBatch<T> pyramid_batch(const Dataset<T>& ds,
                              const std::vector<std::size_t>& idxs,
                              const std::vector<Size2d>& scales) {
  std::vector<Pyramid<T>> pyrs;
  pyrs.reserve(idxs.size());
  for (std::size_t i : idxs)
    pyrs.push_back(build_pyramid(ds.samples[i].image, scales));
  return stack_pyramids(pyrs);
}

// logits_fn: (const Dataset&, indices) -> Tensor [n x C]. Shards the
// dataset across worker threads; counts sum, so results are thread-count
// invariant.
template <typename T, typename Fn>
EvalResult evaluate_logits(const Dataset<T>& ds, std::size_t batch_size,
                           Fn&& logits_fn) {
  const std::size_t n = ds.samples.size();
  if (n == 0) throw ContractError("evaluate: empty dataset");
  const std::size_t k5 = std::min<std::size_t>(5, ds.classes);
  const std::size_t workers = std::min(thread_cap(), n);

  std::vector<std::size_t> ok1(workers, 0), ok5(workers, 0);
  auto run_span = [&](std::size_t wi, std::size_t begin, std::size_t end) {
    NoGradGuard inference;
    for (std::size_t at = begin; at < end; at += batch_size) {
      const std::size_t stop = std::min(end, at + batch_size);
      std::vector<std::size_t> idxs(stop - at);
      for (std::size_t i = 0; i < idxs.size(); ++i) idxs[i] = at + i;
      Tensor<T> logits = logits_fn(ds, idxs);
      for (std::size_t i = 0; i < idxs.size(); ++i) {
        const T* row = logits.data.data() + i * ds.classes;
        const std::size_t label = ds.samples[idxs[i]].label;
        if (label_in_top_k(row, ds.classes, label, 1)) ++ok1[wi];
        if (label_in_top_k(row, ds.classes, label, k5)) ++ok5[wi];
      }
    }
  };

  if (workers == 1) {
    run_span(0, 0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t wi = 0; wi < workers; ++wi) {
      const std::size_t begin = wi * chunk;
      const std::size_t end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(run_span, wi, begin, end);
    }
    for (auto& t : pool) t.join();
  }
  std::size_t c1 = 0, c5 = 0;
  for (std::size_t wi = 0; wi < workers; ++wi) {
    c1 += ok1[wi];
    c5 += ok5[wi];
  }
  const double dn = static_cast<double>(n);
  return {100.0 * (1.0 - c1 / dn), 100.0 * (1.0 - c5 / dn)};
}

template <typename T>
NodePtr<T> logits_for(const CnnClassifier<T>& model,
                      const PyramidBatch<T>& pyr) {
  if (pyr.level_count() != 1)
    throw ContractError("single-scale model expects a one-level pyramid");
  return model.logits(pyr.levels[0]);
}

template <typename T>
NodePtr<T> logits_for(const SrnnVanilla<T>& model, const PyramidBatch<T>& pyr) {
  return model.logits(pyr);
}

template <typename T>
NodePtr<T> logits_for(const SrnnHalfGru<T>& model, const PyramidBatch<T>& pyr) {
  return model.logits(pyr);
}

template <typename T, typename M>
EvalResult evaluate_model(const M& model, const Dataset<T>& ds,
                          const std::vector<Size2d>& scales,
                          std::size_t batch_size) {
  return evaluate_logits(ds, batch_size,
                         [&](const Dataset<T>& d,
                             const std::vector<std::size_t>& idxs) {
                           return logits_for(model, pyramid_batch(d, idxs,
                                                                  scales))
                               ->value;
                         });
}

template <typename T>
EvalResult evaluate_ensemble(const CnnClassifier<T>& model,
                             const Dataset<T>& ds,
                             const std::vector<Size2d>& scales,
                             EnsembleMode mode, std::size_t batch_size) {
  return evaluate_logits(
      ds, batch_size,
      [&](const Dataset<T>& d, const std::vector<std::size_t>& idxs) {
        return ensemble_forward(model, pyramid_batch(d, idxs, scales), mode);
      });
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochStats {
  std::size_t epoch;
  double lr;
  double train_loss;
  double val_top1;
  double val_top5;
};

template <typename T>
std::pair<PyramidBatch<T>, std::vector<std::size_t>> assemble_batch(
    const Dataset<T>& ds, const std::vector<std::size_t>& idxs,
    const std::vector<Size2d>& scales, bool do_augment, Rng& aug_rng,
    bool scale_crop = false) {
  std::vector<Pyramid<T>> pyrs;
  std::vector<std::size_t> labels;
  pyrs.reserve(idxs.size());
  labels.reserve(idxs.size());
  for (std::size_t i : idxs) {
    const auto& s = ds.samples[i];
    if (!do_augment)
      pyrs.push_back(build_pyramid(s.image, scales));
    else if (scale_crop)
      pyrs.push_back(build_pyramid(random_resized_crop(s.image, aug_rng),
                                   scales));
    else
      pyrs.push_back(build_pyramid(augment(s.image, aug_rng), scales));
    labels.push_back(s.label);
  }
  return {stack_pyramids(pyrs), std::move(labels)};
}

// Two-stage recipes live in the CLI; fit trains one head on one dataset.
// Deterministic for a fixed seed in single-threaded mode.
template <typename T, typename M>
std::vector<EpochStats> fit(const TrainConfig& cfg, const Dataset<T>& train,
                            const Dataset<T>& val, M& model) {
  cfg.validate();
  if (cfg.head == Head::ens_logit || cfg.head == Head::ens_prob)
    throw ContractError("fit: ensemble heads are inference-only");
  if (train.samples.empty()) throw ContractError("fit: empty train dataset");
  if (val.samples.empty()) throw ContractError("fit: empty val dataset");

  auto params = model.named_params();
  SgdNesterov<T> opt;
  opt.init(params);
  Rng shuffle_rng(mix_seed(cfg.seed, 0x5b));
  Rng aug_rng(mix_seed(cfg.seed, 0xa6));

  std::vector<EpochStats> history;
  history.reserve(cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    for (const auto& idxs :
         make_batches(train.samples.size(), cfg.batch_size, shuffle_rng)) {
      auto [pyr, labels] = assemble_batch(train, idxs, cfg.scales,
                                          cfg.augment, aug_rng,
                                          cfg.scale_crop);
      NodePtr<T> loss =
          cross_entropy_from_logits(logits_for(model, pyr), labels);
      const double lval = static_cast<double>(loss->value[0]);
      if (!std::isfinite(lval))
        throw DivergenceError("non-finite training loss at epoch " +
                              std::to_string(epoch));
      backward(loss);
      opt.step(params, lr, cfg);
      loss_sum += lval * static_cast<double>(idxs.size());
    }
    const EvalResult ev =
        evaluate_model(model, val, cfg.scales, cfg.batch_size);
    history.push_back({epoch, lr,
                       loss_sum / static_cast<double>(train.samples.size()),
                       ev.top1_error, ev.top5_error});
  }
  return history;
}

}  // namespace srnn
