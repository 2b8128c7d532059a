// Reverse-mode differentiation over Tensor values.
//
// A Var is a handle to a graph node. Operations on Vars record their inputs
// and a local backward rule whenever gradient recording is enabled and at
// least one input requires a gradient. backward() walks the recorded graph
// from a scalar loss and returns the gradients of every reachable leaf.
//
// A graph is single-owner: build it, call backward() once, and drop it.
#ifndef STRF_AUTODIFF_HPP
#define STRF_AUTODIFF_HPP

#include "strf/kernels.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <unordered_set>

namespace strf {

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_mode_flag(); }

// Disables graph recording for the lifetime of the guard (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  using BackwardFn = std::function<void(const Tensor<Scalar>& grad, std::span<Node* const> parents)>;

  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward_fn;
  bool requires_grad = false;

  bool is_leaf() const { return !backward_fn; }

  void accumulate(const Tensor<Scalar>& g) {
    if (grad.empty()) grad = g;
    else grad += g;
  }
  void accumulate(Tensor<Scalar>&& g) {
    if (grad.empty()) grad = std::move(g);
    else grad += g;
  }
};

template <typename Scalar>
class Var {
 public:
  Var() = default;

  explicit Var(Tensor<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Var constant(Tensor<Scalar> value) { return Var(std::move(value), false); }
  static Var parameter(Tensor<Scalar> value) { return Var(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Tensor<Scalar>& value() const { return node_->value; }
  // Leaf values may be updated in place between passes (optimizer steps).
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Dims& dims() const { return node_->value.dims(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Node<Scalar>* node() const { return node_.get(); }
  const std::shared_ptr<Node<Scalar>>& shared_node() const { return node_; }

  static Var from_node(std::shared_ptr<Node<Scalar>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

using VarF = Var<float>;
using VarD = Var<double>;

// Builds the result node of an operation. The backward rule receives the
// output gradient and the parent nodes in input order; it must only
// accumulate into parents whose requires_grad flag is set.
template <typename Scalar>
Var<Scalar> make_result(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                        typename Node<Scalar>::BackwardFn backward) {
  bool needs = false;
  if (grad_mode_enabled())
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  Var<Scalar> out(std::move(value), needs);
  if (needs) {
    auto* n = out.node();
    for (const auto& in : inputs) n->parents.push_back(in.shared_node());
    n->backward_fn = std::move(backward);
  }
  return out;
}

template <typename Scalar>
class GradientMap {
 public:
  // Gradient of a leaf, or zeros of its dims when it was not reached.
  Tensor<Scalar> operator()(const Var<Scalar>& leaf) const {
    if (auto it = grads_.find(leaf.node()); it != grads_.end()) return it->second;
    return Tensor<Scalar>(leaf.dims());
  }
  const Tensor<Scalar>* find(const Var<Scalar>& leaf) const {
    auto it = grads_.find(leaf.node());
    return it == grads_.end() ? nullptr : &it->second;
  }
  bool contains(const Var<Scalar>& leaf) const { return grads_.count(leaf.node()) != 0; }
  std::size_t size() const { return grads_.size(); }

  void insert(const Node<Scalar>* n, Tensor<Scalar> g) { grads_[n] = std::move(g); }

 private:
  std::unordered_map<const Node<Scalar>*, Tensor<Scalar>> grads_;
};

template <typename Scalar>
GradientMap<Scalar> backward(const Var<Scalar>& loss) {
  if (!loss.defined() || loss.value().size() != 1)
    throw ContractError("backward: loss must hold exactly one element, got dims " +
                        (loss.defined() ? to_string(loss.dims()) : std::string("<undefined>")));
  GradientMap<Scalar> result;
  if (!loss.requires_grad()) return result;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> visited;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<Scalar>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  for (auto* n : order) n->grad = Tensor<Scalar>();
  loss.node()->grad = Tensor<Scalar>(loss.dims(), Scalar(1));

  std::vector<Node<Scalar>*> parents;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<Scalar>* n = *it;
    if (n->is_leaf()) {
      result.insert(n, n->grad.empty() ? Tensor<Scalar>(n->value.dims()) : std::move(n->grad));
      n->grad = Tensor<Scalar>();
      continue;
    }
    if (!n->grad.empty()) {
      parents.clear();
      for (auto& p : n->parents) parents.push_back(p.get());
      n->backward_fn(n->grad, parents);
    }
    n->grad = Tensor<Scalar>();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Elementwise and reduction operations

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  a.value().require_same_dims(b.value(), "add");
  return make_result<Scalar>(a.value() + b.value(), {a, b},
                             [](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               for (auto* n : p)
                                 if (n->requires_grad) n->accumulate(g);
                             });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  a.value().require_same_dims(b.value(), "sub");
  return make_result<Scalar>(a.value() - b.value(), {a, b},
                             [](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               if (p[0]->requires_grad) p[0]->accumulate(g);
                               if (p[1]->requires_grad) p[1]->accumulate(g * Scalar(-1));
                             });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  a.value().require_same_dims(b.value(), "mul");
  Tensor<Scalar> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make_result<Scalar>(std::move(out), {a, b},
                             [](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               for (int k = 0; k < 2; ++k) {
                                 if (!p[k]->requires_grad) continue;
                                 Tensor<Scalar> d = g;
                                 const auto& other = p[1 - k]->value;
                                 for (std::size_t i = 0; i < d.size(); ++i) d[i] *= other[i];
                                 p[k]->accumulate(std::move(d));
                               }
                             });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  return make_result<Scalar>(a.value() * s, {a},
                             [s](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               p[0]->accumulate(g * s);
                             });
}

template <typename Scalar>
Var<Scalar> square(const Var<Scalar>& a) {
  Tensor<Scalar> out = a.value();
  for (auto& v : out.values()) v *= v;
  return make_result<Scalar>(std::move(out), {a},
                             [](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               Tensor<Scalar> d = g;
                               const auto& x = p[0]->value;
                               for (std::size_t i = 0; i < d.size(); ++i) d[i] *= Scalar(2) * x[i];
                               p[0]->accumulate(std::move(d));
                             });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Tensor<Scalar> out = a.value();
  if (kink_probe_active())
    for (Scalar v : out.values()) note_kink_distance(std::abs(double(v)));
  for (auto& v : out.values()) v = v < Scalar(0) ? Scalar(0) : v;
  return make_result<Scalar>(std::move(out), {a},
                             [](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               Tensor<Scalar> d = g;
                               const auto& x = p[0]->value;
                               for (std::size_t i = 0; i < d.size(); ++i)
                                 if (!(x[i] > Scalar(0))) d[i] = 0;
                               p[0]->accumulate(std::move(d));
                             });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Scalar total = 0;
  for (Scalar v : a.value().values()) total += v;
  return make_result<Scalar>(Tensor<Scalar>({1}, total), {a},
                             [](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               p[0]->accumulate(Tensor<Scalar>(p[0]->value.dims(), g[0]));
                             });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  return scale(sum(a), Scalar(1) / Scalar(a.value().size()));
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Dims dims) {
  return make_result<Scalar>(a.value().reshaped(std::move(dims)), {a},
                             [](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               p[0]->accumulate(g.reshaped(p[0]->value.dims()));
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b, bool transpose_a = false,
                   bool transpose_b = false) {
  Tensor<Scalar> out = batched_matmul(a.value(), transpose_a, b.value(), transpose_b);
  return make_result<Scalar>(
      std::move(out), {a, b},
      [transpose_a, transpose_b](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
        const auto& av = p[0]->value;
        const auto& bv = p[1]->value;
        // C = op(A) op(B)
        if (p[0]->requires_grad) {
          // dop(A) = G op(B)^T ; dA = dop(A) or its transpose
          Tensor<Scalar> da = transpose_a ? batched_matmul(bv, transpose_b, g, true)
                                          : batched_matmul(g, false, bv, !transpose_b);
          p[0]->accumulate(std::move(da));
        }
        if (p[1]->requires_grad) {
          Tensor<Scalar> db = transpose_b ? batched_matmul(g, true, av, transpose_a)
                                          : batched_matmul(av, !transpose_a, g, false);
          p[1]->accumulate(std::move(db));
        }
      });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  Tensor<Scalar> y = softmax_rows(a.value());
  auto saved = std::make_shared<Tensor<Scalar>>(y);
  return make_result<Scalar>(std::move(y), {a},
                             [saved](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               p[0]->accumulate(softmax_rows_backward(*saved, g));
                             });
}

// ---------------------------------------------------------------------------
// Volume operations

template <typename Scalar>
Var<Scalar> pool3d_with_geometry(const Var<Scalar>& x, const PoolGeometry& geom, PoolMode mode) {
  auto res = pool3d_forward(x.value(), geom, mode);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(std::move(res.argmax));
  return make_result<Scalar>(
      std::move(res.output), {x},
      [geom, mode, argmax](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
        p[0]->accumulate(pool3d_backward(g, p[0]->value.dims(), geom, mode, *argmax));
      });
}

template <typename Scalar>
Var<Scalar> pool3d(const Var<Scalar>& x, Extent3 kernel, PoolMode mode) {
  return pool3d_with_geometry(x, same_pool_geometry(x.dims(), kernel), mode);
}

template <typename Scalar>
Var<Scalar> pool3d_strided(const Var<Scalar>& x, Extent3 kernel, Extent3 stride, PoolMode mode) {
  return pool3d_with_geometry(x, strided_pool_geometry(x.dims(), kernel, stride), mode);
}

template <typename Scalar>
Var<Scalar> conv_channel_mix(const Var<Scalar>& x, const Var<Scalar>& weight) {
  Tensor<Scalar> y = conv_channel_mix(x.value(), weight.value());
  return make_result<Scalar>(
      std::move(y), {x, weight}, [](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
        Tensor<Scalar> gx, gw;
        if (p[0]->requires_grad) gx = Tensor<Scalar>(p[0]->value.dims());
        if (p[1]->requires_grad) gw = Tensor<Scalar>(p[1]->value.dims());
        conv_channel_mix_backward(p[0]->value, p[1]->value, g, p[0]->requires_grad ? &gx : nullptr,
                                  p[1]->requires_grad ? &gw : nullptr);
        if (p[0]->requires_grad) p[0]->accumulate(std::move(gx));
        if (p[1]->requires_grad) p[1]->accumulate(std::move(gw));
      });
}

template <typename Scalar>
Var<Scalar> conv3d(const Var<Scalar>& x, const Var<Scalar>& weight, Extent3 stride,
                   Padding padding) {
  const ConvGeometry geom = conv_geometry(x.dims(), weight.dims(), stride, padding);
  Tensor<Scalar> y = conv3d(x.value(), weight.value(), stride, padding);
  return make_result<Scalar>(
      std::move(y), {x, weight}, [geom](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
        Tensor<Scalar> gx, gw;
        if (p[0]->requires_grad) gx = Tensor<Scalar>(p[0]->value.dims());
        if (p[1]->requires_grad) gw = Tensor<Scalar>(p[1]->value.dims());
        conv3d_backward(p[0]->value, p[1]->value, g, geom, p[0]->requires_grad ? &gx : nullptr,
                        p[1]->requires_grad ? &gw : nullptr);
        if (p[0]->requires_grad) p[0]->accumulate(std::move(gx));
        if (p[1]->requires_grad) p[1]->accumulate(std::move(gw));
      });
}

// Mean over (t, h, w): rank-5 (n, c, ...) -> (n, c); rank-4 (c, ...) -> (c).
template <typename Scalar>
Var<Scalar> global_average_pool(const Var<Scalar>& x) {
  const auto vs = volume_shape(x.dims(), "global_average_pool");
  const std::size_t sites = vs.sites();
  Dims out_dims = x.value().rank() == 4 ? Dims{vs.channels} : Dims{vs.batch, vs.channels};
  Tensor<Scalar> y(out_dims);
  for (std::size_t p = 0; p < vs.planes(); ++p) {
    Scalar acc = 0;
    const Scalar* in = x.value().data() + p * sites;
    for (std::size_t i = 0; i < sites; ++i) acc += in[i];
    y[p] = acc / Scalar(sites);
  }
  return make_result<Scalar>(std::move(y), {x},
                             [sites](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
                               Tensor<Scalar> gx(p[0]->value.dims());
                               for (std::size_t pl = 0; pl < g.size(); ++pl) {
                                 const Scalar share = g[pl] / Scalar(sites);
                                 std::fill_n(gx.data() + pl * sites, sites, share);
                               }
                               p[0]->accumulate(std::move(gx));
                             });
}

// ---------------------------------------------------------------------------
// Batch normalization over every axis but the channel axis.

template <typename Scalar>
struct BatchNormState {
  Tensor<Scalar> running_mean;
  Tensor<Scalar> running_var;
};

struct BatchNormOptions {
  double momentum = 0.1;
  double epsilon = 1e-5;
};

template <typename Scalar>
Var<Scalar> batch_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta,
                       BatchNormState<Scalar>& state, bool training,
                       BatchNormOptions opts = {}) {
  const auto vs = volume_shape(x.dims(), "batch_norm");
  const std::size_t C = vs.channels;
  const std::size_t sites = vs.sites();
  const std::size_t m = vs.batch * sites;
  if (gamma.value().size() != C || beta.value().size() != C)
    throw ShapeError("batch_norm: affine parameters do not match " + std::to_string(C) +
                     " channels");
  const auto& xv = x.value();
  auto stats = std::make_shared<std::pair<std::vector<Scalar>, std::vector<Scalar>>>();
  auto& [mu, inv_std] = *stats;
  mu.assign(C, 0);
  inv_std.assign(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    if (training) {
      double s = 0;
      for (std::size_t n = 0; n < vs.batch; ++n) {
        const Scalar* in = xv.data() + (n * C + c) * sites;
        for (std::size_t i = 0; i < sites; ++i) s += in[i];
      }
      const double mean = s / double(m);
      double ss = 0;
      for (std::size_t n = 0; n < vs.batch; ++n) {
        const Scalar* in = xv.data() + (n * C + c) * sites;
        for (std::size_t i = 0; i < sites; ++i) ss += (in[i] - mean) * (in[i] - mean);
      }
      const double var = ss / double(m);
      mu[c] = Scalar(mean);
      inv_std[c] = Scalar(1.0 / std::sqrt(var + opts.epsilon));
      const double unbiased = m > 1 ? var * double(m) / double(m - 1) : var;
      state.running_mean[c] =
          Scalar((1 - opts.momentum) * state.running_mean[c] + opts.momentum * mean);
      state.running_var[c] =
          Scalar((1 - opts.momentum) * state.running_var[c] + opts.momentum * unbiased);
    } else {
      mu[c] = state.running_mean[c];
      inv_std[c] = Scalar(1.0 / std::sqrt(double(state.running_var[c]) + opts.epsilon));
    }
  }
  Tensor<Scalar> y(x.dims());
  for (std::size_t n = 0; n < vs.batch; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const Scalar a = gamma.value()[c] * inv_std[c];
      const Scalar b = beta.value()[c] - a * mu[c];
      const Scalar* in = xv.data() + (n * C + c) * sites;
      Scalar* out = y.data() + (n * C + c) * sites;
      for (std::size_t i = 0; i < sites; ++i) out[i] = a * in[i] + b;
    }
  return make_result<Scalar>(
      std::move(y), {x, gamma, beta},
      [stats, vs, training](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
        const auto& [mu, inv_std] = *stats;
        const auto& xv = p[0]->value;
        const auto& gam = p[1]->value;
        const std::size_t C = vs.channels, sites = vs.sites();
        const Scalar m = Scalar(vs.batch * sites);
        Tensor<Scalar> gx, ggamma(gam.dims()), gbeta(gam.dims());
        if (p[0]->requires_grad) gx = Tensor<Scalar>(xv.dims());
        for (std::size_t c = 0; c < C; ++c) {
          Scalar sum_g = 0, sum_gx = 0;
          for (std::size_t n = 0; n < vs.batch; ++n) {
            const std::size_t off = (n * C + c) * sites;
            for (std::size_t i = 0; i < sites; ++i) {
              const Scalar xhat = (xv[off + i] - mu[c]) * inv_std[c];
              sum_g += g[off + i];
              sum_gx += g[off + i] * xhat;
            }
          }
          ggamma[c] = sum_gx;
          gbeta[c] = sum_g;
          if (!p[0]->requires_grad) continue;
          const Scalar k = gam[c] * inv_std[c];
          for (std::size_t n = 0; n < vs.batch; ++n) {
            const std::size_t off = (n * C + c) * sites;
            for (std::size_t i = 0; i < sites; ++i) {
              if (training) {
                const Scalar xhat = (xv[off + i] - mu[c]) * inv_std[c];
                gx[off + i] = k * (g[off + i] - sum_g / m - xhat * sum_gx / m);
              } else {
                gx[off + i] = k * g[off + i];
              }
            }
          }
        }
        if (p[0]->requires_grad) p[0]->accumulate(std::move(gx));
        if (p[1]->requires_grad) p[1]->accumulate(std::move(ggamma));
        if (p[2]->requires_grad) p[2]->accumulate(std::move(gbeta));
      });
}

}  // namespace strf

#endif  // STRF_AUTODIFF_HPP
