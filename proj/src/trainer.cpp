#include "strf/trainer.hpp"

#include "strf/objectives.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>

#include "strf/checkpoint.hpp"

namespace strf {

void Adam::step(const std::vector<NamedParam<float>>& params, const GradientMap<float>& grads,
                double lr, double weight_decay) {
  if (m_.empty())
    for (const auto& p : params) {
      m_.emplace_back(p.var.dims());
      v_.emplace_back(p.var.dims());
    }
  if (m_.size() != params.size()) throw ContractError("Adam: parameter set changed between steps");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, double(t_));
  const double c2 = 1.0 - std::pow(beta2_, double(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Var<float> var = params[i].var;
    TensorF& w = var.mutable_value();
    const TensorF* g = grads.find(var);
    float* m = m_[i].data();
    float* v = v_[i].data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = (g ? double((*g)[k]) : 0.0) + weight_decay * double(w[k]);
      m[k] = float(beta1_ * m[k] + (1 - beta1_) * gk);
      v[k] = float(beta2_ * v[k] + (1 - beta2_) * gk * gk);
      const double mh = m[k] / c1, vh = v[k] / c2;
      w[k] = float(double(w[k]) - lr * mh / (std::sqrt(vh) + epsilon_));
    }
  }
}

double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch) {
  const std::size_t epoch = step / std::max<std::size_t>(1, steps_per_epoch);
  const std::size_t drops = cfg.decay_period ? epoch / cfg.decay_period : 0;
  return cfg.lr * std::pow(cfg.decay_factor, double(drops));
}

Dataset load_dataset(const DataConfig& data) {
  const auto manifest = data.manifest_path();
  if (data.manifest.empty() && !std::filesystem::exists(manifest)) generate(data.synth, data.root);
  Dataset ds;
  for (auto& t : load(manifest, data.norm)) {
    switch (t.split) {
      case Split::train: ds.train.push_back(std::move(t)); break;
      case Split::query: ds.query.push_back(std::move(t)); break;
      case Split::gallery: ds.gallery.push_back(std::move(t)); break;
    }
  }
  if (ds.train.empty()) throw LoadError(manifest.string() + ": no training tracklets");
  return ds;
}

std::vector<StepLog> train(Network<float>& net, std::span<const Tracklet> train_set,
                           const TrainConfig& cfg, std::size_t steps, const TrainHooks& hooks) {
  const std::size_t ids = identity_classes(train_set).size();
  if (ids != net.spec().num_classes)
    throw ConfigError("classifier has " + std::to_string(net.spec().num_classes) +
                      " classes but the training split holds " + std::to_string(ids) + " identities");
  const std::size_t per_epoch = std::max<std::size_t>(1, ids / std::max<std::size_t>(1, cfg.P));

  AugmentConfig aug;
  aug.flip_probability = cfg.flip_p;
  aug.erase_probability = cfg.erase_p;
  aug.fill = channel_mean(train_set);

  if (hooks.log_csv) *hooks.log_csv << "step,ce,triplet,total\n" << std::setprecision(9);
  Adam adam;
  const auto params = net.parameters();
  std::vector<StepLog> log;
  net.set_training(true);
  for (std::size_t step = 0; step < steps; ++step) {
    const ClipBatch batch = make_batch(train_set, cfg.P, cfg.K, cfg.T, cfg.stride,
                                       derive_seed(cfg.seed, step), &aug);
    const auto out = net.forward(Var<float>(batch.clips));
    const auto loss = total_loss(out.logits, out.features, std::span<const int>(batch.labels),
                                 float(cfg.margin));
    const StepLog entry{step + 1, double(loss.cross_entropy.value()[0]),
                        double(loss.triplet.value()[0]), double(loss.total.value()[0])};
    if (!std::isfinite(entry.total))
      throw NumericError("non-finite loss at step " + std::to_string(entry.step));
    const auto grads = backward(loss.total);
    for (const auto& p : params)
      if (const TensorF* g = grads.find(p.var); g && !g->all_finite())
        throw NumericError("non-finite gradient for " + p.name + " at step " +
                           std::to_string(entry.step));
    adam.step(params, grads, learning_rate(cfg, step, per_epoch), cfg.weight_decay);
    log.push_back(entry);
    if (hooks.log_csv)
      *hooks.log_csv << entry.step << ',' << entry.ce << ',' << entry.triplet << ',' << entry.total
                     << '\n';
    if (hooks.progress && (entry.step % hooks.progress_every == 0 || entry.step == steps))
      *hooks.progress << "step " << entry.step << '/' << steps << " ce " << entry.ce << " triplet "
                      << entry.triplet << " total " << entry.total << std::endl;
    if (!hooks.checkpoint_dir.empty() && cfg.checkpoint_every && entry.step % cfg.checkpoint_every == 0)
      save_checkpoint(net, hooks.checkpoint_dir / ("step_" + std::to_string(entry.step)));
  }
  net.set_training(false);
  return log;
}

Eigen::MatrixXd extract_features(Network<float>& net, std::span<const Tracklet> tracklets,
                                 std::size_t frames_per_clip, std::size_t batch) {
  if (batch == 0) throw ConfigError("evaluation batch must be >= 1");
  const bool was_training = net.training();
  net.set_training(false);
  struct Pending {
    std::size_t tracklet;
    TensorF clip;
  };
  std::vector<Pending> clips;
  for (std::size_t i = 0; i < tracklets.size(); ++i)
    for (auto& c : sample_clips(tracklets[i], frames_per_clip, 1, ClipMode::test, 0))
      clips.push_back({i, std::move(c)});

  const std::size_t D = net.spec().feature_dim;
  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(Eigen::Index(tracklets.size()), Eigen::Index(D));
  std::vector<std::size_t> counts(tracklets.size(), 0);
  for (std::size_t start = 0; start < clips.size(); start += batch) {
    const std::size_t n = std::min(batch, clips.size() - start);
    Dims d = clips[start].clip.dims();
    d.insert(d.begin(), n);
    std::vector<float> data;
    data.reserve(element_count(d));
    for (std::size_t k = 0; k < n; ++k)
      data.insert(data.end(), clips[start + k].clip.values().begin(), clips[start + k].clip.values().end());
    const TensorF feats = net.forward_features(TensorF(d, std::move(data)));
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t t = clips[start + k].tracklet;
      for (std::size_t j = 0; j < D; ++j) sums(Eigen::Index(t), Eigen::Index(j)) += feats[k * D + j];
      ++counts[t];
    }
  }
  for (std::size_t t = 0; t < tracklets.size(); ++t) sums.row(Eigen::Index(t)) /= double(counts[t]);
  net.set_training(was_training);
  return sums;
}

namespace {

void labels_of(std::span<const Tracklet> ts, std::vector<int>& ids, std::vector<int>& cams) {
  for (const auto& t : ts) {
    ids.push_back(t.identity);
    cams.push_back(t.camera);
  }
}

}  // namespace

RetrievalResult evaluate_retrieval(Network<float>& net, std::span<const Tracklet> query,
                                   std::span<const Tracklet> gallery, std::size_t frames_per_clip,
                                   std::size_t batch) {
  if (query.empty() || gallery.empty()) throw LoadError("evaluation needs query and gallery tracklets");
  const Eigen::MatrixXd q = extract_features(net, query, frames_per_clip, batch);
  const Eigen::MatrixXd g = extract_features(net, gallery, frames_per_clip, batch);
  std::vector<int> qi, qc, gi, gc;
  labels_of(query, qi, qc);
  labels_of(gallery, gi, gc);
  return evaluate(distance_matrix(q, g), qi, qc, gi, gc);
}

RetrievalResult train_retrieval(Network<float>& net, std::span<const Tracklet> train_set,
                                std::size_t frames_per_clip, std::size_t batch) {
  return evaluate_retrieval(net, train_set, train_set, frames_per_clip, batch);
}

}  // namespace strf
