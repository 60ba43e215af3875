#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "srnn/gradcheck.hpp"
#include "srnn/model.hpp"
#include "srnn/train.hpp"

namespace srnn {

// Reverse-mode vs central finite differences on a micro SRNN (both heads),
// every parameter tensor. Double precision only.

struct GradcheckEntry {
  std::string name;
  double rel_error;
};

struct GradcheckReport {
  double tolerance = 1e-4;
  bool pass = false;
  std::string worst_name;
  double worst_error = 0.0;
  std::vector<GradcheckEntry> entries;
};

// Test seam: lets a fixture corrupt one analytic gradient to prove the
// check catches it.
using GradMutator =
    std::function<void(const std::string&, Tensor<double>&)>;

namespace detail {

// Smallest nonzero |pre-activation| over every ReLU in the graph. With
// general-position biases the only exact zeros left are robustly dead
// paths (their upstream pre-activations clear the margin too), which stay
// zero under eps-sized parameter perturbations; near-zero values are what
// threaten the finite-difference comparison.
inline double min_nonzero_prerelu(const NodePtr<double>& root) {
  double m = std::numeric_limits<double>::infinity();
  for (Node<double>* n : topo_order(root))
    if (std::string_view(n->op) == "relu")
      for (double v : n->parents[0]->value.data)
        if (v != 0.0) m = std::min(m, std::abs(v));
  return m;
}

}  // namespace detail

inline GradcheckReport run_srnn_gradcheck(std::uint64_t seed,
                                          double tolerance = 1e-4,
                                          double eps = 1e-5,
                                          const GradMutator& mutate = {}) {
  GradcheckReport report;
  report.tolerance = tolerance;

  BaseCnnConfig cfg;
  cfg.in_channels = 1;
  cfg.stage_channels = {4, 6};
  const std::size_t classes = 2;
  const std::size_t batch = 3;
  const std::vector<Size2d> sizes = {{2, 2}, {4, 4}};

  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng(mix_seed(seed, 0x6c0de + attempt));

    std::vector<Pyramid<double>> pyrs;
    std::vector<std::size_t> labels;
    for (std::size_t b = 0; b < batch; ++b) {
      Image<double> img(rand_uniform<double>({1, 2, 2}, rng, 0.0, 1.0));
      pyrs.push_back(build_pyramid(img, sizes));
      labels.push_back(rng.index(classes));
    }
    const PyramidBatch<double> pyr = stack_pyramids(pyrs);

    CnnClassifier<double> base = CnnClassifier<double>::init(cfg, classes, rng);
    // zero-initialized biases would park pre-activations exactly on the
    // ReLU kink whenever an input patch is dead; check at a general-
    // position point instead
    for (auto& b : base.cnn.biases)
      b = leaf(rand_uniform<double>(b->value.shape, rng, -0.3, 0.3));
    base.fc.bias = leaf(rand_uniform<double>(base.fc.bias->value.shape, rng,
                                             -0.3, 0.3));
    SrnnVanilla<double> vanilla = SrnnVanilla<double>::from_pretrained(base);
    vanilla.U = leaf(rand_uniform<double>(vanilla.U->value.shape, rng, -0.5, 0.5));
    SrnnHalfGru<double> halfgru = SrnnHalfGru<double>::from_pretrained(base);
    halfgru.U = leaf(rand_uniform<double>(halfgru.U->value.shape, rng, -0.5, 0.5));
    halfgru.Wz = leaf(rand_uniform<double>(halfgru.Wz->value.shape, rng, -0.5, 0.5));
    halfgru.Uz = leaf(rand_uniform<double>(halfgru.Uz->value.shape, rng, -0.5, 0.5));
    halfgru.z_bias = leaf(rand_uniform<double>(halfgru.z_bias->value.shape, rng, -0.5, 0.5));

    auto vanilla_loss = [&] {
      return cross_entropy_from_logits(vanilla.logits(pyr), labels);
    };
    auto halfgru_loss = [&] {
      return cross_entropy_from_logits(halfgru.logits(pyr), labels);
    };

    // keep param perturbations well away from every ReLU kink
    if (detail::min_nonzero_prerelu(vanilla_loss()) < 1e-3) continue;
    if (detail::min_nonzero_prerelu(halfgru_loss()) < 1e-3) continue;

    report.entries.clear();
    auto check_head = [&](const char* head, auto& model, auto&& loss_fn) {
      backward(loss_fn());
      std::vector<std::pair<std::string, Tensor<double>>> analytic;
      for (const auto& p : model.named_params())
        analytic.emplace_back(p.name, p.node->grad);
      for (auto& [name, grad] : analytic)
        if (mutate) mutate(name, grad);
      std::size_t i = 0;
      for (const auto& p : model.named_params()) {
        const Tensor<double> saved = p.node->value;
        auto f = [&](const Tensor<double>& x) {
          p.node->value = x;
          return loss_fn()->value[0];
        };
        const Tensor<double> fd = finite_diff_gradient(f, saved, eps);
        p.node->value = saved;
        report.entries.push_back(
            {std::string(head) + "/" + p.name,
             static_cast<double>(gradient_rel_error(analytic[i].second, fd))});
        ++i;
      }
    };
    check_head("srnn_vanilla", vanilla, vanilla_loss);
    check_head("srnn_halfgru", halfgru, halfgru_loss);

    report.worst_error = 0.0;
    for (const auto& e : report.entries)
      if (e.rel_error >= report.worst_error) {
        report.worst_error = e.rel_error;
        report.worst_name = e.name;
      }
    report.pass = report.worst_error < tolerance;
    return report;
  }
  throw NumericError(
      "gradcheck: could not sample inputs clear of ReLU kinks");
}

}  // namespace srnn
