// Spatio-temporal representation factorization unit.
//
// A factorized attention mask (FAM) is built from a channel-reduced, pooled
// copy T of the input volume: M = softmax_rows(kappa * T^T T), with T viewed as
// a ((c/n) t) x (h w) matrix. A feature factorization module (FFM) re-weights
// the (c t) x (h w) view of the input as F * M. Two masks (fine/dynamic and
// coarse/static) per dimension (temporal/spatial) give four branches; the
// temporal and spatial modules are integrated in cascade or in parallel.
#ifndef STRF_STRF_UNIT_HPP
#define STRF_STRF_UNIT_HPP

#include "strf/autodiff.hpp"
#include "strf/random.hpp"

#include <array>
#include <optional>

namespace strf {

enum class FactorDim { temporal, spatial };
// dynamic/fine (small resolution) or static/coarse (large resolution)
enum class FactorKind { fine, coarse };
enum class Integration { temporal_then_spatial, spatial_then_temporal, parallel };

// Order matches the checkpoint record order.
enum class Branch : std::size_t { temporal_fine = 0, temporal_coarse = 1, spatial_fine = 2, spatial_coarse = 3 };
inline constexpr std::array<Branch, 4> kAllBranches{Branch::temporal_fine, Branch::temporal_coarse,
                                                    Branch::spatial_fine, Branch::spatial_coarse};

inline FactorDim branch_dim(Branch b) {
  return std::size_t(b) < 2 ? FactorDim::temporal : FactorDim::spatial;
}
inline FactorKind branch_kind(Branch b) {
  return std::size_t(b) % 2 == 0 ? FactorKind::fine : FactorKind::coarse;
}
inline Branch make_branch(FactorDim d, FactorKind k) {
  return Branch((d == FactorDim::temporal ? 0 : 2) + (k == FactorKind::fine ? 0 : 1));
}
inline const char* branch_name(Branch b) {
  static constexpr const char* names[] = {"temporal_fine", "temporal_coarse", "spatial_fine",
                                          "spatial_coarse"};
  return names[std::size_t(b)];
}
const char* to_string(Integration phi);
Integration parse_integration(const std::string& s);

inline std::size_t effective_reduction(std::size_t reduction, std::size_t channels) {
  return std::max<std::size_t>(1, std::min(reduction, channels));
}

inline std::size_t reduced_channels(std::size_t channels, std::size_t reduction) {
  return std::max<std::size_t>(1, channels / effective_reduction(reduction, channels));
}

struct FamConfig {
  FactorDim dim = FactorDim::temporal;
  FactorKind kind = FactorKind::fine;
  std::size_t resolution = 1;
  PoolMode pool = PoolMode::max;
  std::size_t reduction = 16;
  double temperature = 4.0;

  void validate() const {
    if (resolution == 0 || resolution % 2 == 0)
      throw ConfigError("FAM resolution must be odd and >= 1, got " + std::to_string(resolution));
    if (reduction == 0) throw ConfigError("FAM reduction must be >= 1");
    if (!(temperature > 0)) throw ConfigError("FAM temperature must be positive");
  }

  // Pooling window: (r,1,1) along time or (1,r,r) over space.
  Extent3 kernel() const {
    return dim == FactorDim::temporal ? Extent3{resolution, 1, 1}
                                      : Extent3{1, resolution, resolution};
  }
};

struct StrfConfig {
  std::size_t r_fine = 1;
  std::size_t r_coarse = 3;
  PoolMode temporal_pool = PoolMode::max;
  PoolMode spatial_pool = PoolMode::max;
  Integration integration = Integration::temporal_then_spatial;
  std::size_t reduction = 16;
  double temperature = 4.0;
  std::array<bool, 4> enabled{true, true, true, true};

  bool branch_enabled(Branch b) const { return enabled[std::size_t(b)]; }

  void validate() const {
    for (std::size_t r : {r_fine, r_coarse})
      if (r == 0 || r % 2 == 0)
        throw ConfigError("STRF resolutions must be odd and >= 1, got " + std::to_string(r));
    if (r_coarse < r_fine)
      throw ConfigError("STRF coarse resolution " + std::to_string(r_coarse) +
                        " must not be smaller than fine resolution " + std::to_string(r_fine));
    if (std::none_of(enabled.begin(), enabled.end(), [](bool e) { return e; }))
      throw ConfigError("STRF needs at least one enabled branch");
    fam(Branch::temporal_fine).validate();
  }

  FamConfig fam(Branch b) const {
    FamConfig c;
    c.dim = branch_dim(b);
    c.kind = branch_kind(b);
    c.resolution = c.kind == FactorKind::fine ? r_fine : r_coarse;
    c.pool = c.dim == FactorDim::temporal ? temporal_pool : spatial_pool;
    c.reduction = reduction;
    c.temperature = temperature;
    return c;
  }
};

// Learnable content of one unit: a bias-free (c/n_eff) x c reduction matrix
// per branch.
template <typename Scalar>
struct StrfParams {
  std::array<Var<Scalar>, 4> weights;

  Var<Scalar>& operator[](Branch b) { return weights[std::size_t(b)]; }
  const Var<Scalar>& operator[](Branch b) const { return weights[std::size_t(b)]; }

  std::size_t channels() const { return weights[0].dims()[1]; }

  // Uniform in +-sqrt(1/c), drawn branch by branch in checkpoint order.
  static StrfParams uniform_init(std::size_t channels, std::size_t reduction, Rng& rng) {
    StrfParams p;
    const std::size_t rows = reduced_channels(channels, reduction);
    const double bound = std::sqrt(1.0 / double(channels));
    for (auto& w : p.weights) {
      Tensor<Scalar> t({rows, channels});
      for (auto& v : t.values()) v = Scalar(rng.uniform(-bound, bound));
      w = Var<Scalar>::parameter(std::move(t));
    }
    return p;
  }

  static StrfParams zeros(std::size_t channels, std::size_t reduction) {
    StrfParams p;
    for (auto& w : p.weights)
      w = Var<Scalar>::parameter(Tensor<Scalar>({reduced_channels(channels, reduction), channels}));
    return p;
  }

  template <typename Other>
  StrfParams<Other> cast() const {
    StrfParams<Other> out;
    for (std::size_t i = 0; i < 4; ++i)
      out.weights[i] = Var<Other>::parameter(weights[i].value().template cast<Other>());
    return out;
  }
};

// Exact learnable scalar count of one unit.
inline std::size_t strf_param_count(std::size_t channels, std::size_t reduction) {
  return 4 * channels * reduced_channels(channels, reduction);
}

// ---------------------------------------------------------------------------
// Reshapes

// (c, t, h, w) -> (c t) x (h w); row = c_idx * t + t_idx, column = h_idx * w + w_idx.
template <typename Scalar>
Tensor<Scalar> reshape_to_matrix(const Tensor<Scalar>& f) {
  if (f.rank() != 4)
    throw ShapeError("reshape_to_matrix: expected rank-4 volume, got " + to_string(f.dims()));
  return f.reshaped({f.dim(0) * f.dim(1), f.dim(2) * f.dim(3)});
}

template <typename Scalar>
Tensor<Scalar> matrix_to_volume(const Tensor<Scalar>& m, const Dims& volume) {
  if (volume.size() != 4 || m.rank() != 2 || m.dim(0) != volume[0] * volume[1] ||
      m.dim(1) != volume[2] * volume[3])
    throw ShapeError("matrix_to_volume: matrix " + to_string(m.dims()) +
                     " does not match volume " + to_string(volume));
  return m.reshaped(volume);
}

namespace detail {

// Matrix view of a rank-4 or rank-5 volume: (ct, hw) or (n, ct, hw).
inline Dims matrix_view_dims(const Dims& d) {
  const auto vs = volume_shape(d, "STRF");
  const std::size_t rows = vs.channels * vs.extent.t;
  const std::size_t cols = vs.extent.h * vs.extent.w;
  return d.size() == 4 ? Dims{rows, cols} : Dims{vs.batch, rows, cols};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable forms. f is rank-4 (c,t,h,w) or rank-5 (n,c,t,h,w); masks
// are (hw, hw) or (n, hw, hw) respectively.

template <typename Scalar>
Var<Scalar> fam_mask(const Var<Scalar>& f, const FamConfig& cfg, const Var<Scalar>& weight) {
  cfg.validate();
  const auto vs = volume_shape(f.dims(), "fam_mask");
  const std::size_t rows = reduced_channels(vs.channels, cfg.reduction);
  if (weight.dims() != Dims{rows, vs.channels})
    throw ShapeError("fam_mask: reduction weight dims " + to_string(weight.dims()) +
                     " expected " + to_string(Dims{rows, vs.channels}));
  const Var<Scalar> reduced = conv_channel_mix(f, weight);
  const Var<Scalar> factor = pool3d(reduced, cfg.kernel(), cfg.pool);
  const Var<Scalar> t = reshape(factor, detail::matrix_view_dims(factor.dims()));
  const Var<Scalar> cov = scale(matmul(t, t, true, false), Scalar(cfg.temperature));
  return softmax_rows(cov);
}

template <typename Scalar>
Var<Scalar> ffm_apply(const Var<Scalar>& f, const Var<Scalar>& mask) {
  const Dims view = detail::matrix_view_dims(f.dims());
  const std::size_t side = view.back();
  const Dims expected = view.size() == 2 ? Dims{side, side} : Dims{view[0], side, side};
  if (mask.dims() != expected)
    throw ShapeError("ffm_apply: mask dims " + to_string(mask.dims()) + " expected " +
                     to_string(expected) + " for volume " + to_string(f.dims()));
  return reshape(matmul(reshape(f, view), mask), f.dims());
}

// Sum of the fine and coarse re-weighted volumes along one dimension.
template <typename Scalar>
Var<Scalar> ffm_branch(const Var<Scalar>& f, const FamConfig& fine, const Var<Scalar>& w_fine,
                       const FamConfig& coarse, const Var<Scalar>& w_coarse) {
  if (fine.dim != coarse.dim)
    throw ConfigError("ffm_branch: both masks must factorize the same dimension");
  return add(ffm_apply(f, fam_mask(f, fine, w_fine)), ffm_apply(f, fam_mask(f, coarse, w_coarse)));
}

// One dimension's module honouring the enabled-branch flags; nullopt when
// neither branch of the dimension is enabled.
template <typename Scalar>
std::optional<Var<Scalar>> factorization_module(const Var<Scalar>& f, FactorDim dim,
                                                const StrfConfig& cfg,
                                                const StrfParams<Scalar>& params) {
  const Branch fine = make_branch(dim, FactorKind::fine);
  const Branch coarse = make_branch(dim, FactorKind::coarse);
  const bool use_fine = cfg.branch_enabled(fine);
  const bool use_coarse = cfg.branch_enabled(coarse);
  if (use_fine && use_coarse)
    return ffm_branch(f, cfg.fam(fine), params[fine], cfg.fam(coarse), params[coarse]);
  if (use_fine) return ffm_apply(f, fam_mask(f, cfg.fam(fine), params[fine]));
  if (use_coarse) return ffm_apply(f, fam_mask(f, cfg.fam(coarse), params[coarse]));
  return std::nullopt;
}

template <typename Scalar>
Var<Scalar> strf_forward(const Var<Scalar>& f, const StrfConfig& cfg,
                         const StrfParams<Scalar>& params) {
  cfg.validate();
  const auto temporal = [&](const Var<Scalar>& x) {
    return factorization_module(x, FactorDim::temporal, cfg, params);
  };
  const auto spatial = [&](const Var<Scalar>& x) {
    return factorization_module(x, FactorDim::spatial, cfg, params);
  };
  switch (cfg.integration) {
    case Integration::temporal_then_spatial: {
      const Var<Scalar> mid = temporal(f).value_or(f);
      return spatial(mid).value_or(mid);
    }
    case Integration::spatial_then_temporal: {
      const Var<Scalar> mid = spatial(f).value_or(f);
      return temporal(mid).value_or(mid);
    }
    case Integration::parallel: {
      auto t = temporal(f);
      auto s = spatial(f);
      if (t && s) return add(*t, *s);
      return t ? *t : *s;
    }
  }
  throw ConfigError("strf_forward: unknown integration mode");
}

// ---------------------------------------------------------------------------
// Plain tensor forms (no graph recording).

template <typename Scalar>
Tensor<Scalar> fam_mask(const Tensor<Scalar>& f, const FamConfig& cfg,
                        const Tensor<Scalar>& weight) {
  NoGradGuard guard;
  return fam_mask(Var<Scalar>(f), cfg, Var<Scalar>(weight)).value();
}

template <typename Scalar>
Tensor<Scalar> ffm_apply(const Tensor<Scalar>& f, const Tensor<Scalar>& mask) {
  NoGradGuard guard;
  return ffm_apply(Var<Scalar>(f), Var<Scalar>(mask)).value();
}

template <typename Scalar>
Tensor<Scalar> ffm_branch(const Tensor<Scalar>& f, const FamConfig& fine,
                          const Tensor<Scalar>& w_fine, const FamConfig& coarse,
                          const Tensor<Scalar>& w_coarse) {
  NoGradGuard guard;
  return ffm_branch(Var<Scalar>(f), fine, Var<Scalar>(w_fine), coarse, Var<Scalar>(w_coarse))
      .value();
}

template <typename Scalar>
Tensor<Scalar> strf_forward(const Tensor<Scalar>& f, const StrfConfig& cfg,
                            const StrfParams<Scalar>& params) {
  NoGradGuard guard;
  return strf_forward(Var<Scalar>(f), cfg, params).value();
}

}  // namespace strf

#endif  // STRF_STRF_UNIT_HPP
