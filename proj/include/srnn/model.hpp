#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "srnn/autodiff.hpp"
#include "srnn/rng.hpp"
#include "srnn/tensor.hpp"
#include "srnn/vision.hpp"

namespace srnn {

template <typename T>
struct NamedParam {
  std::string name;
  NodePtr<T> node;
  bool decay;  // weight decay applies to matrices/kernels, never biases
};

// ---------------------------------------------------------------------------
// Base CNN: stacked 3x3 stride-2 conv/ReLU stages ending in global average
// pooling. The pooled feature is elementwise >= 0 (ReLU feeds the pooling)
// and its dimension is independent of the input size.
// ---------------------------------------------------------------------------

struct BaseCnnConfig {
  std::size_t in_channels = 1;
  std::vector<std::size_t> stage_channels = {16, 32, 64, 128};
  std::size_t kernel = 3;
  std::size_t stride = 2;
  std::size_t padding = 1;

  std::size_t feature_dim() const { return stage_channels.back(); }
};

template <typename T>
struct BaseCnn {
  BaseCnnConfig cfg;
  std::vector<NodePtr<T>> weights;  // per stage: Cout x Cin x k x k
  std::vector<NodePtr<T>> biases;   // per stage: Cout

  static BaseCnn he_init(const BaseCnnConfig& cfg, Rng& rng) {
    BaseCnn m;
    m.cfg = cfg;
    std::size_t cin = cfg.in_channels;
    for (std::size_t cout : cfg.stage_channels) {
      const double fan_in =
          static_cast<double>(cin * cfg.kernel * cfg.kernel);
      const double stddev = std::sqrt(2.0 / fan_in);
      m.weights.push_back(leaf(
          rand_normal<T>({cout, cin, cfg.kernel, cfg.kernel}, rng, stddev)));
      m.biases.push_back(leaf(Tensor<T>({cout})));
      cin = cout;
    }
    return m;
  }

  NodePtr<T> features(NodePtr<T> x) const {
    NodePtr<T> h = std::move(x);
    for (std::size_t i = 0; i < weights.size(); ++i)
      h = relu(conv2d(h, weights[i], biases[i], cfg.stride, cfg.padding));
    return global_avg_pool(h);
  }

  NodePtr<T> features(const Tensor<T>& x) const {
    return features(constant(x));
  }

  void collect_params(std::vector<NamedParam<T>>& out) const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const std::string stage = "cnn.stage" + std::to_string(i);
      out.push_back({stage + ".weight", weights[i], true});
      out.push_back({stage + ".bias", biases[i], false});
    }
  }

  BaseCnn clone() const {
    BaseCnn m;
    m.cfg = cfg;
    for (const auto& w : weights) m.weights.push_back(leaf(w->value));
    for (const auto& b : biases) m.biases.push_back(leaf(b->value));
    return m;
  }
};

// Fully connected classifier F (with bias).
template <typename T>
struct Classifier {
  NodePtr<T> weight;  // C x D
  NodePtr<T> bias;    // C

  static Classifier init(std::size_t classes, std::size_t dim, Rng& rng) {
    Classifier f;
    f.weight = leaf(rand_normal<T>({classes, dim}, rng,
                                   std::sqrt(1.0 / static_cast<double>(dim))));
    f.bias = leaf(Tensor<T>({classes}));
    return f;
  }

  NodePtr<T> logits(NodePtr<T> features) const {
    return add_bias(matmul(std::move(features), transpose(weight)), bias);
  }

  std::size_t classes() const { return weight->value.dim(0); }

  void collect_params(std::vector<NamedParam<T>>& out) const {
    out.push_back({"fc.weight", weight, true});
    out.push_back({"fc.bias", bias, false});
  }

  Classifier clone() const {
    return Classifier{leaf(weight->value), leaf(bias->value)};
  }
};

// Base CNN + classifier: the single-scale model, also the carrier the
// ensembles and SRNN heads wrap.
template <typename T>
struct CnnClassifier {
  BaseCnn<T> cnn;
  Classifier<T> fc;

  static CnnClassifier init(const BaseCnnConfig& cfg, std::size_t classes,
                            Rng& rng) {
    CnnClassifier m;
    m.cnn = BaseCnn<T>::he_init(cfg, rng);
    m.fc = Classifier<T>::init(classes, cfg.feature_dim(), rng);
    return m;
  }

  NodePtr<T> logits(const Tensor<T>& batch) const {
    return fc.logits(cnn.features(batch));
  }

  std::vector<NamedParam<T>> named_params() const {
    std::vector<NamedParam<T>> out;
    cnn.collect_params(out);
    fc.collect_params(out);
    return out;
  }

  CnnClassifier clone() const { return {cnn.clone(), fc.clone()}; }
};

// ---------------------------------------------------------------------------
// SRNN heads
// ---------------------------------------------------------------------------

template <typename T>
struct SrnnVanilla {
  BaseCnn<T> cnn;
  NodePtr<T> U;  // D x D state transition, identity at construction
  Classifier<T> fc;

  // Fine-tuning start point: CNN and classifier from the pretrained
  // single-scale model, U = I.
  static SrnnVanilla from_pretrained(const CnnClassifier<T>& base) {
    SrnnVanilla m;
    m.cnn = base.cnn.clone();
    m.fc = base.fc.clone();
    m.U = leaf(identity_matrix<T>(base.cnn.cfg.feature_dim()));
    return m;
  }

  // Hidden states h_1..h_n, smallest scale first.
  std::vector<NodePtr<T>> forward_states(const PyramidBatch<T>& pyr) const {
    if (pyr.levels.empty())
      throw ContractError("srnn forward: empty pyramid");
    const std::size_t batch = pyr.batch_size();
    const std::size_t dim = U->value.dim(0);
    NodePtr<T> ut = transpose(U);
    NodePtr<T> h = constant(Tensor<T>({batch, dim}));
    std::vector<NodePtr<T>> states;
    states.reserve(pyr.levels.size());
    for (const auto& level : pyr.levels) {
      NodePtr<T> f = cnn.features(level);
      h = relu(add(std::move(f), matmul(h, ut)));
      states.push_back(h);
    }
    return states;
  }

  NodePtr<T> logits(const PyramidBatch<T>& pyr) const {
    return fc.logits(forward_states(pyr).back());
  }

  std::vector<NamedParam<T>> named_params() const {
    std::vector<NamedParam<T>> out;
    cnn.collect_params(out);
    out.push_back({"srnn.U", U, true});
    fc.collect_params(out);
    return out;
  }
};

template <typename T>
struct SrnnHalfGru {
  BaseCnn<T> cnn;
  NodePtr<T> U;
  NodePtr<T> Wz;      // D x D, zero at construction
  NodePtr<T> Uz;      // D x D, zero at construction
  NodePtr<T> z_bias;  // D, zero at construction (gate == 0.5 everywhere)
  Classifier<T> fc;

  static SrnnHalfGru from_pretrained(const CnnClassifier<T>& base) {
    SrnnHalfGru m;
    m.cnn = base.cnn.clone();
    m.fc = base.fc.clone();
    const std::size_t dim = base.cnn.cfg.feature_dim();
    m.U = leaf(identity_matrix<T>(dim));
    m.Wz = leaf(Tensor<T>({dim, dim}));
    m.Uz = leaf(Tensor<T>({dim, dim}));
    m.z_bias = leaf(Tensor<T>({dim}));
    return m;
  }

  struct Step {
    NodePtr<T> gate;    // z_s
    NodePtr<T> hidden;  // h_s
  };

  std::vector<Step> forward_steps(const PyramidBatch<T>& pyr) const {
    if (pyr.levels.empty())
      throw ContractError("srnn forward: empty pyramid");
    const std::size_t batch = pyr.batch_size();
    const std::size_t dim = U->value.dim(0);
    NodePtr<T> ut = transpose(U);
    NodePtr<T> wzt = transpose(Wz);
    NodePtr<T> uzt = transpose(Uz);
    NodePtr<T> h = constant(Tensor<T>({batch, dim}));
    std::vector<Step> steps;
    steps.reserve(pyr.levels.size());
    for (const auto& level : pyr.levels) {
      NodePtr<T> f = cnn.features(level);
      NodePtr<T> cand = relu(add(f, matmul(h, ut)));
      NodePtr<T> z = sigmoid(
          add_bias(add(matmul(f, wzt), matmul(h, uzt)), z_bias));
      h = affine_combine(z, h, cand);
      steps.push_back({z, h});
    }
    return steps;
  }

  std::vector<NodePtr<T>> forward_states(const PyramidBatch<T>& pyr) const {
    std::vector<NodePtr<T>> states;
    for (auto& s : forward_steps(pyr)) states.push_back(s.hidden);
    return states;
  }

  NodePtr<T> logits(const PyramidBatch<T>& pyr) const {
    return fc.logits(forward_states(pyr).back());
  }

  std::vector<NamedParam<T>> named_params() const {
    std::vector<NamedParam<T>> out;
    cnn.collect_params(out);
    out.push_back({"srnn.U", U, true});
    out.push_back({"gate.Wz", Wz, true});
    out.push_back({"gate.Uz", Uz, true});
    out.push_back({"gate.bias", z_bias, false});
    fc.collect_params(out);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Ensemble and single-scale heads (inference only)
// ---------------------------------------------------------------------------

enum class EnsembleMode { logit_mean, prob_mean };

// logit_mean: (1/n) sum_s F(f_s); prob_mean: (1/n) sum_s softmax(F(f_s)).
template <typename T>
Tensor<T> ensemble_forward(const CnnClassifier<T>& model,
                           const PyramidBatch<T>& pyr, EnsembleMode mode) {
  if (pyr.levels.empty())
    throw ContractError("ensemble_forward: empty pyramid");
  Tensor<T> acc;
  for (const auto& level : pyr.levels) {
    NodePtr<T> out = model.logits(level);
    if (mode == EnsembleMode::prob_mean) out = softmax(std::move(out));
    if (acc.size() == 0) {
      acc = out->value;
    } else {
      require_same_shape(acc, out->value, "ensemble_forward");
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += out->value[i];
    }
  }
  const T inv = T(1) / static_cast<T>(pyr.levels.size());
  for (auto& v : acc.data) v *= inv;
  return acc;
}

// Resize to `size`, run the base CNN + classifier.
template <typename T>
Tensor<T> single_scale_forward(const CnnClassifier<T>& model,
                               const Image<T>& img, Size2d size) {
  const Image<T>* src = &img;
  Image<T> resized;
  if (size.first != img.height() || size.second != img.width()) {
    resized = bicubic_resize(img, size.first, size.second);
    src = &resized;
  }
  return model.logits(stack_images<T>({src}))->value;
}

// ---------------------------------------------------------------------------
// Analytic multiply-accumulate counts (per sample)
// ---------------------------------------------------------------------------

inline std::size_t cnn_forward_macs(const BaseCnnConfig& cfg, std::size_t h,
                                    std::size_t w) {
  std::size_t macs = 0;
  std::size_t cin = cfg.in_channels;
  for (std::size_t cout : cfg.stage_channels) {
    h = detail::conv_out_extent(h, cfg.kernel, cfg.stride, cfg.padding);
    w = detail::conv_out_extent(w, cfg.kernel, cfg.stride, cfg.padding);
    macs += cout * h * w * cin * cfg.kernel * cfg.kernel;
    cin = cout;
  }
  return macs;
}

enum class SrnnKind { vanilla, half_gru };

// Cost of evaluating the classifier after the first `prefix` pyramid levels.
inline std::size_t srnn_prefix_macs(const BaseCnnConfig& cfg,
                                    const std::vector<Size2d>& sizes,
                                    std::size_t prefix, std::size_t classes,
                                    SrnnKind kind) {
  const std::size_t dim = cfg.feature_dim();
  const std::size_t rec = (kind == SrnnKind::half_gru ? 3 : 1) * dim * dim;
  std::size_t macs = 0;
  for (std::size_t s = 0; s < prefix; ++s)
    macs += cnn_forward_macs(cfg, sizes[s].first, sizes[s].second) + rec;
  return macs + classes * dim;
}

}  // namespace srnn
