// Forward and backward kernels over dense tensors: matrix products,
// row softmax, 3D pooling, channel mixing and 3D convolution.
//
// Volumes are rank-4 (c, t, h, w) or rank-5 (n, c, t, h, w). Everything here
// is a pure function of its arguments.
#ifndef STRF_KERNELS_HPP
#define STRF_KERNELS_HPP

#include "strf/tensor.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>

namespace strf {

// Distance of the current evaluation from the nearest non-differentiable
// point: a ReLU input at zero, a tie for a pooling window's maximum, or a
// hinge / hardest-example tie. Recorded only while a KinkProbe is alive on
// the calling thread.
namespace detail {
inline double*& kink_slot() {
  thread_local double* slot = nullptr;
  return slot;
}
}  // namespace detail

inline bool kink_probe_active() { return detail::kink_slot() != nullptr; }
inline void note_kink_distance(double d) {
  if (double* s = detail::kink_slot()) *s = std::min(*s, d);
}

class KinkProbe {
 public:
  KinkProbe() : previous_(detail::kink_slot()) { detail::kink_slot() = &margin_; }
  ~KinkProbe() { detail::kink_slot() = previous_; }
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  double margin() const { return margin_; }

 private:
  double margin_ = std::numeric_limits<double>::infinity();
  double* previous_;
};

enum class PoolMode { max, avg };
enum class Padding { same, valid };

struct Extent3 {
  std::size_t t = 1, h = 1, w = 1;
  std::size_t volume() const { return t * h * w; }
  bool operator==(const Extent3&) const = default;
};

inline const char* to_string(PoolMode m) { return m == PoolMode::max ? "max" : "avg"; }

// ---------------------------------------------------------------------------
// Matrix products

namespace detail {

struct BatchShape {
  std::size_t batch, rows, cols;
};

inline BatchShape batch_shape(const Dims& d, const char* what) {
  if (d.size() == 2) return {1, d[0], d[1]};
  if (d.size() == 3) return {d[0], d[1], d[2]};
  throw ShapeError(std::string(what) + ": expected rank 2 or 3 operand, got " + to_string(d));
}

}  // namespace detail

// op(a) * op(b) for rank-2 operands, or batch-wise for rank-3 operands with
// equal leading extent.
template <typename Scalar>
Tensor<Scalar> batched_matmul(const Tensor<Scalar>& a, bool transpose_a, const Tensor<Scalar>& b,
                              bool transpose_b) {
  const auto sa = detail::batch_shape(a.dims(), "matmul");
  const auto sb = detail::batch_shape(b.dims(), "matmul");
  const std::size_t m = transpose_a ? sa.cols : sa.rows;
  const std::size_t ka = transpose_a ? sa.rows : sa.cols;
  const std::size_t kb = transpose_b ? sb.cols : sb.rows;
  const std::size_t n = transpose_b ? sb.rows : sb.cols;
  if (a.rank() != b.rank() || sa.batch != sb.batch || ka != kb)
    throw ShapeError("matmul: operand dims " + to_string(a.dims()) + " and " +
                     to_string(b.dims()) + " do not agree");
  Dims out_dims = a.rank() == 2 ? Dims{m, n} : Dims{sa.batch, m, n};
  Tensor<Scalar> out(out_dims);
  for (std::size_t i = 0; i < sa.batch; ++i) {
    ConstMatrixMap<Scalar> ma(a.data() + i * sa.rows * sa.cols, sa.rows, sa.cols);
    ConstMatrixMap<Scalar> mb(b.data() + i * sb.rows * sb.cols, sb.rows, sb.cols);
    MatrixMap<Scalar> mc(out.data() + i * m * n, m, n);
    if (!transpose_a && !transpose_b) mc.noalias() = ma * mb;
    else if (transpose_a && !transpose_b) mc.noalias() = ma.transpose() * mb;
    else if (!transpose_a && transpose_b) mc.noalias() = ma * mb.transpose();
    else mc.noalias() = ma.transpose() * mb.transpose();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: operand dims " + to_string(a.dims()) + " and " +
                     to_string(b.dims()) + " do not agree");
  return batched_matmul(a, false, b, false);
}

// ---------------------------------------------------------------------------
// Softmax over the last axis

template <typename Scalar>
Tensor<Scalar> softmax_rows(const Tensor<Scalar>& x) {
  if (x.rank() < 1) throw ShapeError("softmax_rows: empty tensor");
  const std::size_t n = x.dims().back();
  const std::size_t rows = x.size() / n;
  Tensor<Scalar> y(x.dims());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* in = x.data() + r * n;
    Scalar* out = y.data() + r * n;
    const Scalar mx = *std::max_element(in, in + n);
    Scalar total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    for (std::size_t j = 0; j < n; ++j) out[j] /= total;
  }
  return y;
}

template <typename Scalar>
Tensor<Scalar> softmax_rows_backward(const Tensor<Scalar>& y, const Tensor<Scalar>& grad_y) {
  const std::size_t n = y.dims().back();
  const std::size_t rows = y.size() / n;
  Tensor<Scalar> gx(y.dims());
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* py = y.data() + r * n;
    const Scalar* pg = grad_y.data() + r * n;
    Scalar dot = 0;
    for (std::size_t j = 0; j < n; ++j) dot += py[j] * pg[j];
    for (std::size_t j = 0; j < n; ++j) gx[r * n + j] = py[j] * (pg[j] - dot);
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Volume helpers

struct VolumeShape {
  std::size_t batch = 1;     // 1 for rank-4 volumes
  std::size_t channels = 1;
  Extent3 extent;
  std::size_t planes() const { return batch * channels; }
  std::size_t sites() const { return extent.volume(); }
};

inline VolumeShape volume_shape(const Dims& d, const char* what) {
  if (d.size() == 4) return {1, d[0], {d[1], d[2], d[3]}};
  if (d.size() == 5) return {d[0], d[1], {d[2], d[3], d[4]}};
  throw ShapeError(std::string(what) + ": expected rank-4 or rank-5 volume, got " + to_string(d));
}

inline Dims volume_dims(const Dims& like, std::size_t channels, Extent3 e) {
  if (like.size() == 4) return {channels, e.t, e.h, e.w};
  return {like[0], channels, e.t, e.h, e.w};
}

// ---------------------------------------------------------------------------
// Pooling

struct PoolGeometry {
  Extent3 kernel, stride, pad_before, in, out;
};

// Stride 1, symmetric padding; output extents equal input extents.
inline PoolGeometry same_pool_geometry(const Dims& x_dims, Extent3 kernel) {
  const auto vs = volume_shape(x_dims, "pool3d");
  for (std::size_t k : {kernel.t, kernel.h, kernel.w})
    if (k == 0 || k % 2 == 0)
      throw ConfigError("pool3d: kernel extents must be odd and >= 1, got (" +
                        std::to_string(kernel.t) + "," + std::to_string(kernel.h) + "," +
                        std::to_string(kernel.w) + ")");
  PoolGeometry g;
  g.kernel = kernel;
  g.stride = {1, 1, 1};
  g.pad_before = {kernel.t / 2, kernel.h / 2, kernel.w / 2};
  g.in = vs.extent;
  g.out = vs.extent;
  return g;
}

namespace detail {

inline std::size_t same_out(std::size_t in, std::size_t stride) { return (in + stride - 1) / stride; }

inline std::size_t same_pad_before(std::size_t in, std::size_t k, std::size_t stride) {
  const std::size_t out = same_out(in, stride);
  const std::ptrdiff_t total =
      std::ptrdiff_t((out - 1) * stride + k) - std::ptrdiff_t(in);
  return total > 0 ? std::size_t(total) / 2 : 0;
}

}  // namespace detail

// Strided pooling with "same" output extents ceil(in / stride).
inline PoolGeometry strided_pool_geometry(const Dims& x_dims, Extent3 kernel, Extent3 stride) {
  const auto vs = volume_shape(x_dims, "pool3d");
  if (kernel.volume() == 0 || stride.volume() == 0)
    throw ConfigError("pool3d: kernel and stride extents must be >= 1");
  PoolGeometry g;
  g.kernel = kernel;
  g.stride = stride;
  g.in = vs.extent;
  g.out = {detail::same_out(g.in.t, stride.t), detail::same_out(g.in.h, stride.h),
           detail::same_out(g.in.w, stride.w)};
  g.pad_before = {detail::same_pad_before(g.in.t, kernel.t, stride.t),
                  detail::same_pad_before(g.in.h, kernel.h, stride.h),
                  detail::same_pad_before(g.in.w, kernel.w, stride.w)};
  return g;
}

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> output;
  // Max mode only: per output element, the flat in-plane index of the winner.
  std::vector<std::uint32_t> argmax;
};

template <typename Scalar>
PoolResult<Scalar> pool3d_forward(const Tensor<Scalar>& x, const PoolGeometry& g, PoolMode mode) {
  const auto vs = volume_shape(x.dims(), "pool3d");
  PoolResult<Scalar> res{Tensor<Scalar>(volume_dims(x.dims(), vs.channels, g.out)), {}};
  if (mode == PoolMode::max) res.argmax.resize(res.output.size());
  const std::size_t in_plane = g.in.volume();
  const std::size_t out_plane = g.out.volume();
  const auto lo = [](std::size_t o, std::size_t stride, std::size_t pad) {
    return std::ptrdiff_t(o * stride) - std::ptrdiff_t(pad);
  };
  const bool probe = kink_probe_active();
  for (std::size_t p = 0; p < vs.planes(); ++p) {
    const Scalar* in = x.data() + p * in_plane;
    Scalar* out = res.output.data() + p * out_plane;
    std::uint32_t* am = mode == PoolMode::max ? res.argmax.data() + p * out_plane : nullptr;
    std::size_t o = 0;
    for (std::size_t ot = 0; ot < g.out.t; ++ot) {
      const std::ptrdiff_t t0 = lo(ot, g.stride.t, g.pad_before.t);
      for (std::size_t oh = 0; oh < g.out.h; ++oh) {
        const std::ptrdiff_t h0 = lo(oh, g.stride.h, g.pad_before.h);
        for (std::size_t ow = 0; ow < g.out.w; ++ow, ++o) {
          const std::ptrdiff_t w0 = lo(ow, g.stride.w, g.pad_before.w);
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          Scalar second = best;
          std::uint32_t best_idx = 0;
          // Wide accumulator: a constant window averages back to exactly that constant.
          long double acc = 0;
          std::size_t count = 0;
          for (std::size_t kt = 0; kt < g.kernel.t; ++kt) {
            const std::ptrdiff_t it = t0 + std::ptrdiff_t(kt);
            if (it < 0 || it >= std::ptrdiff_t(g.in.t)) continue;
            for (std::size_t kh = 0; kh < g.kernel.h; ++kh) {
              const std::ptrdiff_t ih = h0 + std::ptrdiff_t(kh);
              if (ih < 0 || ih >= std::ptrdiff_t(g.in.h)) continue;
              for (std::size_t kw = 0; kw < g.kernel.w; ++kw) {
                const std::ptrdiff_t iw = w0 + std::ptrdiff_t(kw);
                if (iw < 0 || iw >= std::ptrdiff_t(g.in.w)) continue;
                const std::size_t idx = (std::size_t(it) * g.in.h + std::size_t(ih)) * g.in.w +
                                        std::size_t(iw);
                const Scalar v = in[idx];
                if (mode == PoolMode::max) {
                  if (count == 0 || v > best) {
                    second = best;
                    best = v;
                    best_idx = std::uint32_t(idx);
                  } else if (v > second) {
                    second = v;
                  }
                } else {
                  acc += v;
                }
                ++count;
              }
            }
          }
          if (mode == PoolMode::max) {
            out[o] = best;
            am[o] = best_idx;
            if (probe && count > 1) note_kink_distance(double(best - second));
          } else {
            out[o] = Scalar(acc / static_cast<long double>(count));
          }
        }
      }
    }
  }
  return res;
}

template <typename Scalar>
Tensor<Scalar> pool3d_backward(const Tensor<Scalar>& grad_out, const Dims& in_dims,
                               const PoolGeometry& g, PoolMode mode,
                               const std::vector<std::uint32_t>& argmax) {
  const auto vs = volume_shape(in_dims, "pool3d");
  Tensor<Scalar> gx(in_dims);
  const std::size_t in_plane = g.in.volume();
  const std::size_t out_plane = g.out.volume();
  for (std::size_t p = 0; p < vs.planes(); ++p) {
    Scalar* gin = gx.data() + p * in_plane;
    const Scalar* gout = grad_out.data() + p * out_plane;
    if (mode == PoolMode::max) {
      const std::uint32_t* am = argmax.data() + p * out_plane;
      for (std::size_t o = 0; o < out_plane; ++o) gin[am[o]] += gout[o];
      continue;
    }
    std::size_t o = 0;
    for (std::size_t ot = 0; ot < g.out.t; ++ot) {
      const std::ptrdiff_t t0 = std::ptrdiff_t(ot * g.stride.t) - std::ptrdiff_t(g.pad_before.t);
      for (std::size_t oh = 0; oh < g.out.h; ++oh) {
        const std::ptrdiff_t h0 = std::ptrdiff_t(oh * g.stride.h) - std::ptrdiff_t(g.pad_before.h);
        for (std::size_t ow = 0; ow < g.out.w; ++ow, ++o) {
          const std::ptrdiff_t w0 =
              std::ptrdiff_t(ow * g.stride.w) - std::ptrdiff_t(g.pad_before.w);
          const auto clamp_range = [](std::ptrdiff_t start, std::size_t k, std::size_t n) {
            const std::ptrdiff_t b = std::max<std::ptrdiff_t>(start, 0);
            const std::ptrdiff_t e = std::min<std::ptrdiff_t>(start + std::ptrdiff_t(k), std::ptrdiff_t(n));
            return std::pair{b, e};
          };
          const auto [tb, te] = clamp_range(t0, g.kernel.t, g.in.t);
          const auto [hb, he] = clamp_range(h0, g.kernel.h, g.in.h);
          const auto [wb, we] = clamp_range(w0, g.kernel.w, g.in.w);
          const Scalar share = gout[o] / Scalar((te - tb) * (he - hb) * (we - wb));
          for (std::ptrdiff_t it = tb; it < te; ++it)
            for (std::ptrdiff_t ih = hb; ih < he; ++ih)
              for (std::ptrdiff_t iw = wb; iw < we; ++iw)
                gin[(std::size_t(it) * g.in.h + std::size_t(ih)) * g.in.w + std::size_t(iw)] +=
                    share;
        }
      }
    }
  }
  return gx;
}

// Shape-preserving stride-1 pooling with odd kernels.
template <typename Scalar>
Tensor<Scalar> pool3d(const Tensor<Scalar>& x, Extent3 kernel, PoolMode mode) {
  return pool3d_forward(x, same_pool_geometry(x.dims(), kernel), mode).output;
}

// ---------------------------------------------------------------------------
// 1x1x1 channel mixing without bias: out[:, site] = W * in[:, site].

template <typename Scalar>
Tensor<Scalar> conv_channel_mix(const Tensor<Scalar>& x, const Tensor<Scalar>& weight) {
  const auto vs = volume_shape(x.dims(), "conv_channel_mix");
  if (weight.rank() != 2 || weight.dim(1) != vs.channels)
    throw ShapeError("conv_channel_mix: weight dims " + to_string(weight.dims()) +
                     " incompatible with input dims " + to_string(x.dims()));
  const std::size_t cout = weight.dim(0);
  const std::size_t sites = vs.sites();
  Tensor<Scalar> y(volume_dims(x.dims(), cout, vs.extent));
  const auto w = weight.as_matrix();
  for (std::size_t n = 0; n < vs.batch; ++n) {
    ConstMatrixMap<Scalar> xin(x.data() + n * vs.channels * sites, vs.channels, sites);
    MatrixMap<Scalar> yout(y.data() + n * cout * sites, cout, sites);
    yout.noalias() = w * xin;
  }
  return y;
}

template <typename Scalar>
void conv_channel_mix_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                               const Tensor<Scalar>& grad_y, Tensor<Scalar>* grad_x,
                               Tensor<Scalar>* grad_w) {
  const auto vs = volume_shape(x.dims(), "conv_channel_mix");
  const std::size_t cout = weight.dim(0);
  const std::size_t sites = vs.sites();
  const auto w = weight.as_matrix();
  for (std::size_t n = 0; n < vs.batch; ++n) {
    ConstMatrixMap<Scalar> xin(x.data() + n * vs.channels * sites, vs.channels, sites);
    ConstMatrixMap<Scalar> gy(grad_y.data() + n * cout * sites, cout, sites);
    if (grad_x) {
      MatrixMap<Scalar> gx(grad_x->data() + n * vs.channels * sites, vs.channels, sites);
      gx.noalias() += w.transpose() * gy;
    }
    if (grad_w) grad_w->as_matrix().noalias() += gy * xin.transpose();
  }
}

// ---------------------------------------------------------------------------
// 3D convolution (cross-correlation), weight dims (c_out, c_in, k_t, k_h, k_w).

struct ConvGeometry {
  std::size_t batch = 1, cin = 0, cout = 0;
  Extent3 in, kernel, stride, pad_before, out;
  bool pointwise() const {
    return kernel == Extent3{1, 1, 1} && stride == Extent3{1, 1, 1};
  }
};

inline ConvGeometry conv_geometry(const Dims& x_dims, const Dims& w_dims, Extent3 stride,
                                  Padding padding) {
  const auto vs = volume_shape(x_dims, "conv3d");
  if (w_dims.size() != 5 || w_dims[1] != vs.channels)
    throw ShapeError("conv3d: kernel bank dims " + to_string(w_dims) +
                     " incompatible with input dims " + to_string(x_dims));
  if (stride.t == 0 || stride.h == 0 || stride.w == 0)
    throw ConfigError("conv3d: strides must be >= 1");
  ConvGeometry g;
  g.batch = vs.batch;
  g.cin = vs.channels;
  g.cout = w_dims[0];
  g.in = vs.extent;
  g.kernel = {w_dims[2], w_dims[3], w_dims[4]};
  g.stride = stride;
  if (padding == Padding::same) {
    g.out = {detail::same_out(g.in.t, stride.t), detail::same_out(g.in.h, stride.h),
             detail::same_out(g.in.w, stride.w)};
    g.pad_before = {detail::same_pad_before(g.in.t, g.kernel.t, stride.t),
                    detail::same_pad_before(g.in.h, g.kernel.h, stride.h),
                    detail::same_pad_before(g.in.w, g.kernel.w, stride.w)};
  } else {
    if (g.in.t < g.kernel.t || g.in.h < g.kernel.h || g.in.w < g.kernel.w)
      throw ShapeError("conv3d: valid padding needs input " + to_string(x_dims) +
                       " at least as large as kernel " + to_string(w_dims));
    g.out = {(g.in.t - g.kernel.t) / stride.t + 1, (g.in.h - g.kernel.h) / stride.h + 1,
             (g.in.w - g.kernel.w) / stride.w + 1};
    g.pad_before = {0, 0, 0};
  }
  return g;
}

namespace detail {

// cols has (cin * kernel volume) rows and (out volume) columns.
template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, Scalar* cols) {
  const std::size_t out_sites = g.out.volume();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    const Scalar* plane = x + c * g.in.volume();
    for (std::size_t kt = 0; kt < g.kernel.t; ++kt)
      for (std::size_t kh = 0; kh < g.kernel.h; ++kh)
        for (std::size_t kw = 0; kw < g.kernel.w; ++kw, ++row) {
          Scalar* dst = cols + row * out_sites;
          std::size_t o = 0;
          for (std::size_t ot = 0; ot < g.out.t; ++ot) {
            const std::ptrdiff_t it = std::ptrdiff_t(ot * g.stride.t + kt) - std::ptrdiff_t(g.pad_before.t);
            const bool t_ok = it >= 0 && it < std::ptrdiff_t(g.in.t);
            for (std::size_t oh = 0; oh < g.out.h; ++oh) {
              const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.stride.h + kh) - std::ptrdiff_t(g.pad_before.h);
              const bool th_ok = t_ok && ih >= 0 && ih < std::ptrdiff_t(g.in.h);
              const Scalar* src = th_ok ? plane + (std::size_t(it) * g.in.h + std::size_t(ih)) * g.in.w : nullptr;
              for (std::size_t ow = 0; ow < g.out.w; ++ow, ++o) {
                const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.stride.w + kw) - std::ptrdiff_t(g.pad_before.w);
                dst[o] = (th_ok && iw >= 0 && iw < std::ptrdiff_t(g.in.w)) ? src[iw] : Scalar(0);
              }
            }
          }
        }
  }
}

template <typename Scalar>
void col2im(const Scalar* cols, const ConvGeometry& g, Scalar* x) {
  const std::size_t out_sites = g.out.volume();
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    Scalar* plane = x + c * g.in.volume();
    for (std::size_t kt = 0; kt < g.kernel.t; ++kt)
      for (std::size_t kh = 0; kh < g.kernel.h; ++kh)
        for (std::size_t kw = 0; kw < g.kernel.w; ++kw, ++row) {
          const Scalar* src = cols + row * out_sites;
          std::size_t o = 0;
          for (std::size_t ot = 0; ot < g.out.t; ++ot) {
            const std::ptrdiff_t it = std::ptrdiff_t(ot * g.stride.t + kt) - std::ptrdiff_t(g.pad_before.t);
            const bool t_ok = it >= 0 && it < std::ptrdiff_t(g.in.t);
            for (std::size_t oh = 0; oh < g.out.h; ++oh) {
              const std::ptrdiff_t ih = std::ptrdiff_t(oh * g.stride.h + kh) - std::ptrdiff_t(g.pad_before.h);
              const bool th_ok = t_ok && ih >= 0 && ih < std::ptrdiff_t(g.in.h);
              if (!th_ok) {
                o += g.out.w;
                continue;
              }
              Scalar* dst = plane + (std::size_t(it) * g.in.h + std::size_t(ih)) * g.in.w;
              for (std::size_t ow = 0; ow < g.out.w; ++ow, ++o) {
                const std::ptrdiff_t iw = std::ptrdiff_t(ow * g.stride.w + kw) - std::ptrdiff_t(g.pad_before.w);
                if (iw >= 0 && iw < std::ptrdiff_t(g.in.w)) dst[iw] += src[o];
              }
            }
          }
        }
  }
}

}  // namespace detail

template <typename Scalar>
Tensor<Scalar> conv3d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, Extent3 stride,
                      Padding padding) {
  const ConvGeometry g = conv_geometry(x.dims(), weight.dims(), stride, padding);
  Tensor<Scalar> y(volume_dims(x.dims(), g.cout, g.out));
  const std::size_t patch = g.cin * g.kernel.volume();
  const std::size_t out_sites = g.out.volume();
  ConstMatrixMap<Scalar> w(weight.data(), g.cout, patch);
  std::vector<Scalar> cols(g.pointwise() ? 0 : patch * out_sites);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const Scalar* xin = x.data() + n * g.cin * g.in.volume();
    const Scalar* src = xin;
    if (!g.pointwise()) {
      detail::im2col(xin, g, cols.data());
      src = cols.data();
    }
    ConstMatrixMap<Scalar> c(src, patch, out_sites);
    MatrixMap<Scalar> out(y.data() + n * g.cout * out_sites, g.cout, out_sites);
    out.noalias() = w * c;
  }
  return y;
}

template <typename Scalar>
void conv3d_backward(const Tensor<Scalar>& x, const Tensor<Scalar>& weight,
                     const Tensor<Scalar>& grad_y, const ConvGeometry& g, Tensor<Scalar>* grad_x,
                     Tensor<Scalar>* grad_w) {
  const std::size_t patch = g.cin * g.kernel.volume();
  const std::size_t out_sites = g.out.volume();
  ConstMatrixMap<Scalar> w(weight.data(), g.cout, patch);
  std::vector<Scalar> cols(g.pointwise() ? 0 : patch * out_sites);
  for (std::size_t n = 0; n < g.batch; ++n) {
    const Scalar* xin = x.data() + n * g.cin * g.in.volume();
    ConstMatrixMap<Scalar> gy(grad_y.data() + n * g.cout * out_sites, g.cout, out_sites);
    if (grad_w) {
      const Scalar* src = xin;
      if (!g.pointwise()) {
        detail::im2col(xin, g, cols.data());
        src = cols.data();
      }
      ConstMatrixMap<Scalar> c(src, patch, out_sites);
      MatrixMap<Scalar> gw(grad_w->data(), g.cout, patch);
      gw.noalias() += gy * c.transpose();
    }
    if (grad_x) {
      Scalar* gxin = grad_x->data() + n * g.cin * g.in.volume();
      if (g.pointwise()) {
        MatrixMap<Scalar> gx(gxin, patch, out_sites);
        gx.noalias() += w.transpose() * gy;
      } else {
        MatrixMap<Scalar> gc(cols.data(), patch, out_sites);
        gc.noalias() = w.transpose() * gy;
        detail::col2im(cols.data(), g, gxin);
      }
    }
  }
}

}  // namespace strf

#endif  // STRF_KERNELS_HPP
