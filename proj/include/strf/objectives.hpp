// Training objective: softmax cross-entropy plus a cosine-distance
// batch-hard triplet loss, summed with equal weights.
#ifndef STRF_OBJECTIVES_HPP
#define STRF_OBJECTIVES_HPP

#include "strf/autodiff.hpp"

#include <map>

namespace strf {

template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  logits.value().require_rank(2);
  const std::size_t N = logits.dims()[0], K = logits.dims()[1];
  if (labels.size() != N)
    throw ContractError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(N) + " rows");
  for (int y : labels)
    if (y < 0 || std::size_t(y) >= K)
      throw ContractError("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                          std::to_string(K) + ")");
  Tensor<Scalar> probs = softmax_rows(logits.value());
  Scalar loss = 0;
  for (std::size_t i = 0; i < N; ++i) {
    // log-softmax with max subtraction
    const Scalar* row = logits.value().data() + i * K;
    const Scalar mx = *std::max_element(row, row + K);
    Scalar z = 0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    loss += std::log(z) + mx - row[labels[i]];
  }
  loss /= Scalar(N);
  auto saved = std::make_shared<std::pair<Tensor<Scalar>, std::vector<int>>>(
      std::move(probs), std::vector<int>(labels.begin(), labels.end()));
  return make_result<Scalar>(
      Tensor<Scalar>({1}, loss), {logits},
      [saved, N, K](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
        Tensor<Scalar> d = saved->first;
        for (std::size_t i = 0; i < N; ++i) d[i * K + std::size_t(saved->second[i])] -= Scalar(1);
        d *= g[0] / Scalar(N);
        p[0]->accumulate(std::move(d));
      });
}

// 1 - <u, v> / (|u| |v|), in [0, 2].
template <typename Scalar>
Scalar cosine_distance(std::span<const Scalar> u, std::span<const Scalar> v) {
  if (u.size() != v.size()) throw ShapeError("cosine_distance: vector lengths differ");
  Scalar uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == Scalar(0) || vv == Scalar(0)) throw DomainError("cosine_distance: zero vector");
  const Scalar cos = uv / std::sqrt(uu * vv);
  return Scalar(1) - std::clamp(cos, Scalar(-1), Scalar(1));
}

// Labels must each occur at least twice, with at least two distinct labels.
inline void check_triplet_labels(std::span<const int> labels) {
  std::map<int, std::size_t> counts;
  for (int y : labels) ++counts[y];
  if (counts.size() < 2)
    throw ContractError("batch_hard_triplet: need at least two distinct labels");
  for (const auto& [label, n] : counts)
    if (n < 2)
      throw ContractError("batch_hard_triplet: label " + std::to_string(label) +
                          " occurs only once; each label needs a positive");
}

// Mean over anchors of max(0, d(a, hardest positive) - d(a, hardest negative) + margin),
// with d the cosine distance. Ties resolve to the lowest index; the hinge
// gradient at exactly zero is taken as zero.
template <typename Scalar>
Var<Scalar> batch_hard_triplet(const Var<Scalar>& embeddings, std::span<const int> labels,
                               Scalar margin) {
  embeddings.value().require_rank(2);
  const std::size_t N = embeddings.dims()[0], D = embeddings.dims()[1];
  if (labels.size() != N)
    throw ContractError("batch_hard_triplet: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(N) + " embeddings");
  check_triplet_labels(labels);
  const auto& E = embeddings.value();
  std::vector<Scalar> norms(N);
  for (std::size_t i = 0; i < N; ++i) {
    Scalar s = 0;
    for (std::size_t k = 0; k < D; ++k) s += E[i * D + k] * E[i * D + k];
    if (s == Scalar(0))
      throw DomainError("batch_hard_triplet: embedding " + std::to_string(i) + " is zero");
    norms[i] = std::sqrt(s);
  }
  const auto row = [&](std::size_t i) { return std::span<const Scalar>(E.data() + i * D, D); };

  struct Active {
    std::size_t anchor, positive, negative;
  };
  auto active = std::make_shared<std::vector<Active>>();
  Scalar loss = 0;
  for (std::size_t a = 0; a < N; ++a) {
    Scalar hardest_pos = -1, hardest_neg = 3, runner_pos = -1, runner_neg = 3;
    std::size_t p_idx = a, n_idx = a;
    for (std::size_t j = 0; j < N; ++j) {
      if (j == a) continue;
      const Scalar d = cosine_distance(row(a), row(j));
      if (labels[j] == labels[a]) {
        if (d > hardest_pos) runner_pos = hardest_pos, hardest_pos = d, p_idx = j;
        else if (d > runner_pos) runner_pos = d;
      } else if (d < hardest_neg) {
        runner_neg = hardest_neg, hardest_neg = d, n_idx = j;
      } else if (d < runner_neg) {
        runner_neg = d;
      }
    }
    const Scalar h = hardest_pos - hardest_neg + margin;
    if (kink_probe_active()) {
      note_kink_distance(std::abs(double(h)));
      if (runner_pos >= 0) note_kink_distance(double(hardest_pos - runner_pos));
      if (runner_neg <= 2) note_kink_distance(double(runner_neg - hardest_neg));
    }
    if (h > Scalar(0)) {
      loss += h;
      active->push_back({a, p_idx, n_idx});
    }
  }
  loss /= Scalar(N);
  auto saved_norms = std::make_shared<std::vector<Scalar>>(std::move(norms));
  return make_result<Scalar>(
      Tensor<Scalar>({1}, loss), {embeddings},
      [active, saved_norms, N, D](const Tensor<Scalar>& g, std::span<Node<Scalar>* const> p) {
        const auto& E = p[0]->value;
        const auto& nrm = *saved_norms;
        Tensor<Scalar> d(E.dims());
        const Scalar w = g[0] / Scalar(N);
        // d(u,v) = 1 - cos; d/du = -(v_hat - cos u_hat) / |u|
        const auto add_grad = [&](std::size_t u, std::size_t v, Scalar sign) {
          Scalar dot = 0;
          for (std::size_t k = 0; k < D; ++k) dot += E[u * D + k] * E[v * D + k];
          const Scalar cos = dot / (nrm[u] * nrm[v]);
          for (std::size_t k = 0; k < D; ++k) {
            const Scalar uh = E[u * D + k] / nrm[u], vh = E[v * D + k] / nrm[v];
            d[u * D + k] += sign * w * -(vh - cos * uh) / nrm[u];
            d[v * D + k] += sign * w * -(uh - cos * vh) / nrm[v];
          }
        };
        for (const auto& t : *active) {
          add_grad(t.anchor, t.positive, Scalar(1));
          add_grad(t.anchor, t.negative, Scalar(-1));
        }
        p[0]->accumulate(std::move(d));
      });
}

template <typename Scalar>
struct LossTerms {
  Var<Scalar> cross_entropy;
  Var<Scalar> triplet;
  Var<Scalar> total;
};

template <typename Scalar>
LossTerms<Scalar> total_loss(const Var<Scalar>& logits, const Var<Scalar>& embeddings,
                             std::span<const int> labels, Scalar margin) {
  LossTerms<Scalar> t;
  t.cross_entropy = cross_entropy(logits, labels);
  t.triplet = batch_hard_triplet(embeddings, labels, margin);
  t.total = add(t.cross_entropy, t.triplet);
  return t;
}

}  // namespace strf

#endif  // STRF_OBJECTIVES_HPP
