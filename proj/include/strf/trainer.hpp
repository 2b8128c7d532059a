// Optimization loop, feature extraction and retrieval scoring for a network.
#ifndef STRF_TRAINER_HPP
#define STRF_TRAINER_HPP

#include "strf/config.hpp"
#include "strf/reid_eval.hpp"

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>

namespace strf {

// Adaptive-moment descent with L2 weight decay folded into the gradient.
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

  void step(const std::vector<NamedParam<float>>& params, const GradientMap<float>& grads,
            double lr, double weight_decay);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, epsilon_;
  std::size_t t_ = 0;
  std::vector<TensorF> m_, v_;
};

// Step-decayed learning rate at a given step.
double learning_rate(const TrainConfig& cfg, std::size_t step, std::size_t steps_per_epoch);

struct Dataset {
  std::vector<Tracklet> train, query, gallery;
  std::size_t classes() const { return identity_classes(train).size(); }
};

// Loads the manifest of `data`, generating the synthetic dataset first when no
// manifest path is configured and none exists under the root yet.
Dataset load_dataset(const DataConfig& data);

struct StepLog {
  std::size_t step = 0;
  double ce = 0, triplet = 0, total = 0;
};

struct TrainHooks {
  std::ostream* log_csv = nullptr;  // step,ce,triplet,total
  std::ostream* progress = nullptr;
  std::size_t progress_every = 25;
  std::filesystem::path checkpoint_dir;  // empty: no periodic checkpoints
};

// Runs `steps` optimization steps on identity-balanced batches; throws
// NumericError on a non-finite loss or gradient.
std::vector<StepLog> train(Network<float>& net, std::span<const Tracklet> train_set,
                           const TrainConfig& cfg, std::size_t steps, const TrainHooks& hooks = {});

// One embedding per tracklet: test-mode clips averaged, eval-mode network.
Eigen::MatrixXd extract_features(Network<float>& net, std::span<const Tracklet> tracklets,
                                 std::size_t frames_per_clip, std::size_t batch);

RetrievalResult evaluate_retrieval(Network<float>& net, std::span<const Tracklet> query,
                                   std::span<const Tracklet> gallery, std::size_t frames_per_clip,
                                   std::size_t batch);

// Every training tracklet queried against all the others.
RetrievalResult train_retrieval(Network<float>& net, std::span<const Tracklet> train_set,
                                std::size_t frames_per_clip, std::size_t batch);

}  // namespace strf

#endif  // STRF_TRAINER_HPP
