#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "srnn/autodiff.hpp"
#include "srnn/tensor.hpp"

namespace srnn {

// ---------------------------------------------------------------------------
// Image / Pyramid
// ---------------------------------------------------------------------------

template <typename T>
struct Image {
  Tensor<T> data;  // C x H x W

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w) : data({c, h, w}) {}
  explicit Image(Tensor<T> t) : data(std::move(t)) {
    if (data.rank() != 3)
      throw ShapeError("image: want C x H x W, got " + shape_str(data.shape));
  }

  std::size_t channels() const { return data.dim(0); }
  std::size_t height() const { return data.dim(1); }
  std::size_t width() const { return data.dim(2); }

  T& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height() + y) * width() + x];
  }
  const T& at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height() + y) * width() + x];
  }
};

using Size2d = std::pair<std::size_t, std::size_t>;  // (H, W)

// Levels ascend strictly in area; index 0 is the smallest scale.
template <typename T>
struct Pyramid {
  std::vector<Image<T>> levels;

  std::size_t height_count() const { return levels.size(); }
};

// ---------------------------------------------------------------------------
// Bicubic resize (Keys kernel, a = -0.5, half-pixel centers, edge clamp)
// ---------------------------------------------------------------------------

namespace detail {

inline double cubic_weight(double t) {
  t = std::abs(t);
  if (t <= 1.0) return ((1.5 * t - 2.5) * t) * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

struct ResampleTap {
  std::size_t idx[4];
  double w[4];
};

inline std::vector<ResampleTap> make_taps(std::size_t in, std::size_t out) {
  std::vector<ResampleTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    const double base = std::floor(src);
    const double f = src - base;
    const long b = static_cast<long>(base);
    double wsum = 0.0;
    for (int k = 0; k < 4; ++k) {
      const long i = b - 1 + k;
      taps[o].idx[k] = static_cast<std::size_t>(
          std::clamp<long>(i, 0, static_cast<long>(in) - 1));
      taps[o].w[k] = cubic_weight(f - static_cast<double>(k - 1));
      wsum += taps[o].w[k];
    }
    for (int k = 0; k < 4; ++k) taps[o].w[k] /= wsum;
  }
  return taps;
}

}  // namespace detail

// Separable cubic-convolution resampling. Raw pixel output is clamped to
// [0,1] since the kernel overshoots on step edges. No Gaussian prefilter
// before downscaling: content above the target Nyquist rate aliases.
template <typename T>
Image<T> bicubic_resize(const Image<T>& img, std::size_t out_h,
                        std::size_t out_w, bool clamp01 = true) {
  if (out_h == 0 || out_w == 0)
    throw ShapeError("bicubic_resize: zero output extent");
  const std::size_t C = img.channels(), H = img.height(), W = img.width();
  const auto xt = detail::make_taps(W, out_w);
  const auto yt = detail::make_taps(H, out_h);

  // horizontal pass: C x H x out_w
  std::vector<double> tmp(C * H * out_w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y) {
      const T* row = &img.at(c, y, 0);
      double* trow = tmp.data() + (c * H + y) * out_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& t = xt[x];
        trow[x] = t.w[0] * row[t.idx[0]] + t.w[1] * row[t.idx[1]] +
                  t.w[2] * row[t.idx[2]] + t.w[3] * row[t.idx[3]];
      }
    }

  // vertical pass
  Image<T> out(C, out_h, out_w);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& t = yt[y];
      const double* r0 = tmp.data() + (c * H + t.idx[0]) * out_w;
      const double* r1 = tmp.data() + (c * H + t.idx[1]) * out_w;
      const double* r2 = tmp.data() + (c * H + t.idx[2]) * out_w;
      const double* r3 = tmp.data() + (c * H + t.idx[3]) * out_w;
      T* orow = &out.at(c, y, 0);
      for (std::size_t x = 0; x < out_w; ++x) {
        double v = t.w[0] * r0[x] + t.w[1] * r1[x] + t.w[2] * r2[x] +
                   t.w[3] * r3[x];
        if (clamp01) v = std::clamp(v, 0.0, 1.0);
        orow[x] = static_cast<T>(v);
      }
    }
  return out;
}

// One bicubic resize per target, smallest first. A target equal to the
// source passes the image through untouched.
template <typename T>
Pyramid<T> build_pyramid(const Image<T>& img,
                         const std::vector<Size2d>& target_sizes,
                         bool clamp01 = true) {
  if (target_sizes.empty())
    throw ContractError("build_pyramid: no target sizes");
  for (std::size_t i = 1; i < target_sizes.size(); ++i) {
    const std::size_t prev = target_sizes[i - 1].first * target_sizes[i - 1].second;
    const std::size_t cur = target_sizes[i].first * target_sizes[i].second;
    if (cur <= prev)
      throw ContractError("build_pyramid: target areas must strictly ascend");
  }
  Pyramid<T> pyr;
  pyr.levels.reserve(target_sizes.size());
  for (const auto& [h, w] : target_sizes) {
    if (h == img.height() && w == img.width())
      pyr.levels.push_back(img);
    else
      pyr.levels.push_back(bicubic_resize(img, h, w, clamp01));
  }
  return pyr;
}

// ---------------------------------------------------------------------------
// conv2d / global average pooling (differentiable)
// ---------------------------------------------------------------------------

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k,
                                   std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// col is (Cin*kh*kw) x (oh*ow) for one sample.
template <typename T>
void im2col(const T* x, T* col, std::size_t cin, std::size_t h, std::size_t w,
            std::size_t kh, std::size_t kw, std::size_t stride,
            std::size_t pad, std::size_t oh, std::size_t ow) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* crow = col + ((c * kh + ky) * kw + kx) * (oh * ow);
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) -
                          static_cast<long>(pad);
          T* dst = crow + oy * ow;
          if (iy < 0 || iy >= static_cast<long>(h)) {
            std::fill(dst, dst + ow, T(0));
            continue;
          }
          const T* src = x + (c * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) -
                            static_cast<long>(pad);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(w))
                          ? T(0)
                          : src[static_cast<std::size_t>(ix)];
          }
        }
      }
}

template <typename T>
void col2im_acc(const T* col, T* x, std::size_t cin, std::size_t h,
                std::size_t w, std::size_t kh, std::size_t kw,
                std::size_t stride, std::size_t pad, std::size_t oh,
                std::size_t ow) {
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* crow = col + ((c * kh + ky) * kw + kx) * (oh * ow);
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const long iy = static_cast<long>(oy * stride + ky) -
                          static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          T* dst = x + (c * h + static_cast<std::size_t>(iy)) * w;
          const T* src = crow + oy * ow;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const long ix = static_cast<long>(ox * stride + kx) -
                            static_cast<long>(pad);
            if (ix >= 0 && ix < static_cast<long>(w))
              dst[static_cast<std::size_t>(ix)] += src[ox];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation with zero padding. x: B x Cin x H x W,
// weight: Cout x Cin x kh x kw, bias: Cout.
template <typename T>
NodePtr<T> conv2d(NodePtr<T> x, NodePtr<T> weight, NodePtr<T> bias,
                  std::size_t stride, std::size_t pad) {
  const Tensor<T>& X = x->value;
  const Tensor<T>& W = weight->value;
  const Tensor<T>& Bi = bias->value;
  if (X.rank() != 4)
    throw ShapeError("conv2d: input must be B x C x H x W, got " +
                     shape_str(X.shape));
  if (W.rank() != 4)
    throw ShapeError("conv2d: weight must be Cout x Cin x kh x kw, got " +
                     shape_str(W.shape));
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  const std::size_t batch = X.dim(0), cin = X.dim(1), h = X.dim(2),
                    w = X.dim(3);
  const std::size_t cout = W.dim(0), kh = W.dim(2), kw = W.dim(3);
  if (W.dim(1) != cin)
    throw ShapeError("conv2d: weight expects " + std::to_string(W.dim(1)) +
                     " input channels, input has " + std::to_string(cin));
  if (Bi.rank() != 1 || Bi.dim(0) != cout)
    throw ShapeError("conv2d: bias shape " + shape_str(Bi.shape) +
                     " does not match Cout " + std::to_string(cout));
  if (h + 2 * pad < kh || w + 2 * pad < kw)
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" +
                     std::to_string(kw) + " larger than padded input " +
                     std::to_string(h + 2 * pad) + "x" +
                     std::to_string(w + 2 * pad));
  const std::size_t oh = detail::conv_out_extent(h, kh, stride, pad);
  const std::size_t ow = detail::conv_out_extent(w, kw, stride, pad);
  const std::size_t K = cin * kh * kw;
  const std::size_t P = oh * ow;

  Tensor<T> out({batch, cout, oh, ow});
  std::vector<T> col(K * P);
  for (std::size_t b = 0; b < batch; ++b) {
    detail::im2col(X.data.data() + b * cin * h * w, col.data(), cin, h, w, kh,
                   kw, stride, pad, oh, ow);
    T* ob = out.data.data() + b * cout * P;
    for (std::size_t o = 0; o < cout; ++o)
      std::fill(ob + o * P, ob + (o + 1) * P, Bi[o]);
    gemm_nn_acc(W.data.data(), col.data(), ob, cout, K, P);
  }

  bool rg = any_grad<T>({x, weight, bias});
  return make_node<T>(
      std::move(out), rg, "conv2d", {x, weight, bias},
      [batch, cin, h, w, cout, kh, kw, stride, pad, oh, ow, K,
       P](Node<T>& nd) {
        auto& X = *nd.parents[0];
        auto& W = *nd.parents[1];
        auto& Bi = *nd.parents[2];
        std::vector<T> col(K * P);
        std::vector<T> dcol(K * P);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* gb = nd.grad.data.data() + b * cout * P;
          if (Bi.requires_grad)
            for (std::size_t o = 0; o < cout; ++o) {
              T s = 0;
              for (std::size_t p = 0; p < P; ++p) s += gb[o * P + p];
              Bi.grad[o] += s;
            }
          if (W.requires_grad || X.requires_grad)
            detail::im2col(X.value.data.data() + b * cin * h * w, col.data(),
                           cin, h, w, kh, kw, stride, pad, oh, ow);
          if (W.requires_grad)
            gemm_nt_acc(gb, col.data(), W.grad.data.data(), cout, P, K);
          if (X.requires_grad) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            gemm_tn_acc(W.value.data.data(), gb, dcol.data(), cout, K, P);
            detail::col2im_acc(dcol.data(), X.grad.data.data() + b * cin * h * w,
                               cin, h, w, kh, kw, stride, pad, oh, ow);
          }
        }
      });
}

// Per-channel spatial mean: B x C x H x W -> B x C.
template <typename T>
NodePtr<T> global_avg_pool(NodePtr<T> x) {
  const Tensor<T>& X = x->value;
  if (X.rank() != 4)
    throw ShapeError("global_avg_pool: input must be B x C x H x W, got " +
                     shape_str(X.shape));
  const std::size_t batch = X.dim(0), ch = X.dim(1), h = X.dim(2),
                    w = X.dim(3);
  const std::size_t hw = h * w;
  Tensor<T> out({batch, ch});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t c = 0; c < ch; ++c) {
      const T* plane = X.data.data() + (b * ch + c) * hw;
      T s = 0;
      for (std::size_t i = 0; i < hw; ++i) s += plane[i];
      out.at(b, c) = s / static_cast<T>(hw);
    }
  return make_node<T>(std::move(out), x->requires_grad, "global_avg_pool",
                      {x}, [batch, ch, hw](Node<T>& nd) {
                        auto& X = *nd.parents[0];
                        if (!X.requires_grad) return;
                        for (std::size_t b = 0; b < batch; ++b)
                          for (std::size_t c = 0; c < ch; ++c) {
                            const T g = nd.grad.at(b, c) / static_cast<T>(hw);
                            T* plane =
                                X.grad.data.data() + (b * ch + c) * hw;
                            for (std::size_t i = 0; i < hw; ++i)
                              plane[i] += g;
                          }
                      });
}

// ---------------------------------------------------------------------------
// Batch assembly
// ---------------------------------------------------------------------------

// Same-shape images stacked into B x C x H x W.
template <typename T>
Tensor<T> stack_images(const std::vector<const Image<T>*>& imgs) {
  if (imgs.empty()) throw ContractError("stack_images: empty batch");
  const std::size_t c = imgs[0]->channels(), h = imgs[0]->height(),
                    w = imgs[0]->width();
  Tensor<T> out({imgs.size(), c, h, w});
  const std::size_t stride = c * h * w;
  for (std::size_t b = 0; b < imgs.size(); ++b) {
    if (imgs[b]->channels() != c || imgs[b]->height() != h ||
        imgs[b]->width() != w)
      throw ShapeError("stack_images: mismatched image shapes in batch");
    std::copy(imgs[b]->data.data.begin(), imgs[b]->data.data.end(),
              out.data.begin() + b * stride);
  }
  return out;
}

// Per-level batch tensors for a batch of pyramids with identical geometry.
template <typename T>
struct PyramidBatch {
  std::vector<Tensor<T>> levels;  // each B x C x Hs x Ws, ascending area

  std::size_t level_count() const { return levels.size(); }
  std::size_t batch_size() const {
    return levels.empty() ? 0 : levels[0].dim(0);
  }
};

template <typename T>
PyramidBatch<T> stack_pyramids(const std::vector<Pyramid<T>>& pyrs) {
  if (pyrs.empty()) throw ContractError("stack_pyramids: empty batch");
  const std::size_t n = pyrs[0].levels.size();
  PyramidBatch<T> out;
  out.levels.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::vector<const Image<T>*> level;
    level.reserve(pyrs.size());
    for (const auto& p : pyrs) {
      if (p.levels.size() != n)
        throw ContractError("stack_pyramids: inconsistent level counts");
      level.push_back(&p.levels[s]);
    }
    out.levels.push_back(stack_images(level));
  }
  return out;
}

}  // namespace srnn
