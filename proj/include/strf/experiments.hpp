// Reusable drivers behind the command-line tool: the gradient-check suite,
// parameter accounting report, training runs and the ablation matrix.
#ifndef STRF_EXPERIMENTS_HPP
#define STRF_EXPERIMENTS_HPP

#include "strf/trainer.hpp"

#include <memory>
#include <optional>

namespace strf {

struct GradCheckEntry {
  std::string component;
  double max_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t draws = 1;  // input draws until one was clear of kinks
};

// Double-precision central differences over strf_forward (all integration
// modes), every STRF-carrying block variant, cross entropy and the batch-hard
// triplet loss.
std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed = 3, double epsilon = 1e-5);

struct ParamsReport {
  ParamTable with_strf;
  std::size_t baseline_total = 0;
  std::size_t strf_delta = 0;     // with_strf.total - baseline_total
  std::size_t strf_formula = 0;   // sum of strf_param_count over placed units
  std::size_t strf_units = 0;
  std::string text;
};

// Counts `model` as configured and again with no STRF stages.
ParamsReport params_report(const ModelConfig& model, std::size_t classes);

struct RunOutcome {
  std::vector<StepLog> log;
  RetrievalResult train;
  std::optional<RetrievalResult> test;
  double seconds = 0.0;
  std::shared_ptr<Network<float>> net;
};

// Builds the configured network for `ds`, trains it and scores train and
// (when present) query/gallery retrieval.
RunOutcome run_experiment(const RunConfig& cfg, const Dataset& ds, const TrainHooks& hooks = {});

// Trains and evaluates every ablation setting; writes one CSV row each.
void run_ablation(const RunConfig& cfg, const Dataset& ds, std::ostream& csv,
                  std::ostream* progress = nullptr);

}  // namespace strf

#endif  // STRF_EXPERIMENTS_HPP
