#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "srnn/checkpoint.hpp"
#include "srnn/model.hpp"

namespace srnn {

template <typename T>
std::vector<NamedTensorF> state_of(const std::vector<NamedParam<T>>& params) {
  std::vector<NamedTensorF> out;
  out.reserve(params.size());
  for (const auto& p : params) {
    Tensor<float> t(p.node->value.shape);
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = static_cast<float>(p.node->value[i]);
    out.push_back({p.name, std::move(t)});
  }
  return out;
}

// Copies every parameter from `state`; missing tensors are an error listing
// all absent names, extra tensors are ignored.
template <typename T>
void load_state(const std::vector<NamedParam<T>>& params,
                const std::vector<NamedTensorF>& state) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& nt : state) by_name[nt.name] = &nt.tensor;
  std::string missing;
  for (const auto& p : params)
    if (!by_name.count(p.name)) missing += (missing.empty() ? "" : ", ") + p.name;
  if (!missing.empty())
    throw CheckpointError("checkpoint is missing tensors: " + missing);
  for (const auto& p : params) {
    const Tensor<float>& src = *by_name[p.name];
    if (src.shape != p.node->value.shape)
      throw CheckpointError("checkpoint tensor " + p.name + " has shape " +
                            shape_str(src.shape) + ", model expects " +
                            shape_str(p.node->value.shape));
    for (std::size_t i = 0; i < src.size(); ++i)
      p.node->value[i] = static_cast<T>(src[i]);
  }
}

enum class ModelKind { base, vanilla, half_gru };

inline const char* model_kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::base: return "base";
    case ModelKind::vanilla: return "srnn_vanilla";
    default: return "srnn_halfgru";
  }
}

inline ModelKind checkpoint_kind(const std::vector<NamedTensorF>& state) {
  bool has_u = false, has_gate = false;
  for (const auto& nt : state) {
    if (nt.name == "srnn.U") has_u = true;
    if (nt.name == "gate.Wz") has_gate = true;
  }
  if (has_gate) return ModelKind::half_gru;
  if (has_u) return ModelKind::vanilla;
  return ModelKind::base;
}

namespace detail {

inline const Tensor<float>& state_tensor(const std::vector<NamedTensorF>& state,
                                         const std::string& name) {
  for (const auto& nt : state)
    if (nt.name == name) return nt.tensor;
  throw CheckpointError("checkpoint is missing tensors: " + name);
}

}  // namespace detail

// Stage widths, kernel and input channels are recovered from the stored
// conv shapes; stride/padding are fixed by the architecture family.
inline BaseCnnConfig cnn_config_from_state(
    const std::vector<NamedTensorF>& state) {
  BaseCnnConfig cfg;
  cfg.stage_channels.clear();
  for (std::size_t i = 0;; ++i) {
    const std::string name = "cnn.stage" + std::to_string(i) + ".weight";
    bool found = false;
    for (const auto& nt : state)
      if (nt.name == name) {
        if (i == 0) {
          cfg.in_channels = nt.tensor.dim(1);
          cfg.kernel = nt.tensor.dim(2);
        }
        cfg.stage_channels.push_back(nt.tensor.dim(0));
        found = true;
        break;
      }
    if (!found) break;
  }
  if (cfg.stage_channels.empty())
    throw CheckpointError("checkpoint is missing tensors: cnn.stage0.weight");
  return cfg;
}

template <typename T>
BaseCnn<T> cnn_zeros(const BaseCnnConfig& cfg) {
  BaseCnn<T> m;
  m.cfg = cfg;
  std::size_t cin = cfg.in_channels;
  for (std::size_t cout : cfg.stage_channels) {
    m.weights.push_back(leaf(Tensor<T>({cout, cin, cfg.kernel, cfg.kernel})));
    m.biases.push_back(leaf(Tensor<T>({cout})));
    cin = cout;
  }
  return m;
}

template <typename T>
CnnClassifier<T> base_from_state(const std::vector<NamedTensorF>& state) {
  const BaseCnnConfig cfg = cnn_config_from_state(state);
  const auto& fcw = detail::state_tensor(state, "fc.weight");
  CnnClassifier<T> m;
  m.cnn = cnn_zeros<T>(cfg);
  m.fc.weight = leaf(Tensor<T>({fcw.dim(0), fcw.dim(1)}));
  m.fc.bias = leaf(Tensor<T>({fcw.dim(0)}));
  load_state(m.named_params(), state);
  return m;
}

template <typename T>
SrnnVanilla<T> vanilla_from_state(const std::vector<NamedTensorF>& state) {
  SrnnVanilla<T> m = SrnnVanilla<T>::from_pretrained(base_from_state<T>(state));
  load_state(m.named_params(), state);
  return m;
}

template <typename T>
SrnnHalfGru<T> halfgru_from_state(const std::vector<NamedTensorF>& state) {
  SrnnHalfGru<T> m = SrnnHalfGru<T>::from_pretrained(base_from_state<T>(state));
  load_state(m.named_params(), state);
  return m;
}

}  // namespace srnn
