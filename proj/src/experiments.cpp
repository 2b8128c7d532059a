#include "strf/experiments.hpp"

#include "strf/grad_check.hpp"
#include "strf/objectives.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

namespace strf {

namespace {

TensorD random_tensor(Dims dims, Rng& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(dims));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// A differentiable scalar function together with the leaves to perturb.
struct Probe {
  std::function<VarD()> f;
  std::vector<VarD> leaves;
};

// Distance, in activation units, that must separate the evaluation point from
// every kink so that a central difference of step 1e-5 stays on one side.
constexpr double kKinkMargin = 1e-4;
constexpr std::size_t kMaxDraws = 64;

// Redraws the inputs until no ReLU, pooling maximum or hinge sits within
// kKinkMargin of a tie, then runs the central-difference check.
GradCheckEntry check(const std::string& name, std::uint64_t seed, double epsilon,
                     const std::function<Probe(Rng&)>& make) {
  for (std::size_t draw = 0; draw < kMaxDraws; ++draw) {
    Rng rng(derive_seed(seed, draw));
    Probe probe = make(rng);
    double margin = 0;
    {
      NoGradGuard guard;
      KinkProbe kinks;
      probe.f();
      margin = kinks.margin();
    }
    if (margin < kKinkMargin) continue;
    GradCheckOptions opts;
    opts.epsilon = epsilon;
    const GradCheckReport r = grad_check(probe.f, probe.leaves, opts);
    return {name, r.max_rel_error, r.coordinates, draw + 1};
  }
  throw EvaluationError("grad_check: no kink-free input found for " + name);
}

Probe strf_probe(const StrfConfig& cfg, Rng& rng) {
  auto params = std::make_shared<StrfParams<double>>(StrfParams<double>::uniform_init(8, cfg.reduction, rng));
  VarD f = VarD::parameter(random_tensor({8, 4, 6, 3}, rng));
  Probe p;
  p.leaves.push_back(f);
  for (Branch b : kAllBranches) p.leaves.push_back((*params)[b]);
  p.f = [f, params, cfg] { return mean(square(strf_forward(f, cfg, *params))); };
  return p;
}

Probe block_probe(BlockVariant variant, std::size_t stride, Rng& rng) {
  BlockSpec spec;
  spec.variant = variant;
  spec.in_width = 16;
  spec.out_width = 64;
  spec.bottleneck_width = 16;
  spec.spatial_stride = stride;
  spec.strf = StrfConfig{};
  auto block = std::make_shared<ResidualBlock<double>>(spec, rng);
  std::vector<NamedParam<double>> params;
  block->collect("block", {&params, nullptr});
  Probe p;
  VarD x = VarD::parameter(random_tensor({1, 16, 4, 6, 3}, rng));
  p.leaves.push_back(x);
  // Move BN affine parameters off their initial values so every path carries
  // a generic gradient.
  for (auto& param : params) {
    if (param.name.find(".gamma") != std::string::npos || param.name.find(".beta") != std::string::npos)
      for (auto& v : param.var.mutable_value().values()) v += rng.uniform(-0.2, 0.2);
    p.leaves.push_back(param.var);
  }
  p.f = [x, block] { return mean(square(block->forward(x, true))); };
  return p;
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed, double epsilon) {
  std::vector<GradCheckEntry> out;
  std::uint64_t stream = 0;
  const auto next = [&] { return derive_seed(seed, ++stream); };

  for (Integration phi : {Integration::temporal_then_spatial, Integration::spatial_then_temporal,
                          Integration::parallel}) {
    StrfConfig cfg;
    cfg.integration = phi;
    out.push_back(check(std::string("strf_forward ") + to_string(phi), next(), epsilon,
                        [&](Rng& rng) { return strf_probe(cfg, rng); }));
  }
  {
    StrfConfig cfg;
    cfg.temporal_pool = cfg.spatial_pool = PoolMode::avg;
    out.push_back(check("strf_forward avg pooling", next(), epsilon, [&](Rng& rng) { return strf_probe(cfg, rng); }));
  }

  for (BlockVariant v : {BlockVariant::I3D, BlockVariant::P3DA, BlockVariant::P3DB, BlockVariant::P3DC})
    out.push_back(check(std::string(to_string(v)) + "+strf block", next(), epsilon,
                        [&](Rng& rng) { return block_probe(v, 1, rng); }));
  out.push_back(check("p3dc+strf block, stride 2", next(), epsilon,
                      [&](Rng& rng) { return block_probe(BlockVariant::P3DC, 2, rng); }));

  out.push_back(check("cross_entropy", next(), epsilon, [](Rng& rng) {
    VarD logits = VarD::parameter(random_tensor({8, 5}, rng, -2.0, 2.0));
    auto labels = std::make_shared<std::vector<int>>(8);
    for (auto& l : *labels) l = int(rng.below(5));
    return Probe{[logits, labels] { return cross_entropy(logits, std::span<const int>(*labels)); }, {logits}};
  }));
  out.push_back(check("batch_hard_triplet", next(), epsilon, [](Rng& rng) {
    VarD emb = VarD::parameter(random_tensor({8, 4}, rng));
    static const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
    return Probe{[emb] { return batch_hard_triplet(emb, std::span<const int>(labels), 0.3); }, {emb}};
  }));
  return out;
}

ParamsReport params_report(const ModelConfig& model, std::size_t classes) {
  ModelConfig baseline = model;
  baseline.strf_stages.clear();
  const NetworkSpec spec = model.network_spec(classes);
  const NetworkSpec base_spec = baseline.network_spec(classes);

  ParamsReport r;
  r.with_strf = count_params(spec);
  r.baseline_total = count_params(base_spec).total;
  r.strf_delta = r.with_strf.total - r.baseline_total;
  std::ostringstream units;
  for (std::size_t s = 0; s < 4; ++s) {
    const StageSpec& st = spec.stages[s];
    if (!st.strf) continue;
    const std::size_t per = strf_param_count(st.bottleneck_width, spec.strf.reduction);
    r.strf_units += st.blocks;
    r.strf_formula += st.blocks * per;
    units << "  stage " << s + 1 << ": " << st.blocks << " units at c=" << st.bottleneck_width
          << ", " << per << " each\n";
  }

  std::ostringstream t;
  char line[160];
  t << "layer\tdims\tparams\n";
  for (const auto& row : r.with_strf.rows) t << row.name << '\t' << to_string(row.dims) << '\t' << row.count << '\n';
  t << '\n';
  const double ref_base = 25.48e6, ref_strf = 25.53e6;
  std::snprintf(line, sizeof line, "baseline total   %zu (%.4fM, %+.2f%% vs 25.48M reference)\n",
                r.baseline_total, double(r.baseline_total) / 1e6,
                100.0 * (double(r.baseline_total) / ref_base - 1.0));
  t << line;
  std::snprintf(line, sizeof line, "with STRF total  %zu (%.4fM, %+.2f%% vs 25.53M reference)\n",
                r.with_strf.total, double(r.with_strf.total) / 1e6,
                100.0 * (double(r.with_strf.total) / ref_strf - 1.0));
  t << line;
  t << "STRF delta       " << r.strf_delta << '\n';
  t << "sum of 4*c*(c/min(n,c)) over " << r.strf_units << " units = " << r.strf_formula
    << (r.strf_formula == r.strf_delta ? " (matches delta)\n" : " (MISMATCH)\n");
  t << units.str();
  t << "\nreference overhead figures, mutually inconsistent and not matched:\n"
       "  0.15M learnable parameters per unit\n"
       "  +0.05M network total (25.48M -> 25.53M)\n"
       "  ~0.5M added, in the comparison against non-local blocks\n";
  std::snprintf(line, sizeof line, "  counted here: %zu per unit on average, +%.4fM total\n",
                r.strf_units ? r.strf_formula / r.strf_units : 0, double(r.strf_delta) / 1e6);
  t << line;
  r.text = t.str();
  return r;
}

RunOutcome run_experiment(const RunConfig& cfg, const Dataset& ds, const TrainHooks& hooks) {
  const auto start = std::chrono::steady_clock::now();
  const std::size_t ids = ds.classes();
  RunOutcome out;
  out.net = std::make_shared<Network<float>>(cfg.model.network_spec(ids), cfg.train.seed);
  out.log = train(*out.net, ds.train, cfg.train, cfg.total_steps(ids), hooks);
  out.train = train_retrieval(*out.net, ds.train, cfg.train.T, cfg.train.eval_batch);
  if (!ds.query.empty() && !ds.gallery.empty())
    out.test = evaluate_retrieval(*out.net, ds.query, ds.gallery, cfg.train.T, cfg.train.eval_batch);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

void run_ablation(const RunConfig& cfg, const Dataset& ds, std::ostream& csv, std::ostream* progress) {
  csv << "axis,setting,integration,temporal_pool,spatial_pool,branches,r_fine,r_coarse,steps,"
         "final_total,train_r1,test_r1,test_map,strf_params\n";
  for (const auto& setting : cfg.ablation.settings(cfg.model.strf)) {
    RunConfig run = cfg;
    run.model.strf = setting.strf;
    run.train.max_steps = cfg.ablation.steps;
    const RunOutcome o = run_experiment(run, ds);
    const ParamTable table = o.net->parameter_table();
    std::size_t strf_params = 0;
    for (const auto& row : table.rows)
      if (row.name.find(".strf.") != std::string::npos) strf_params += row.count;
    std::string branches;
    for (Branch b : kAllBranches)
      if (setting.strf.branch_enabled(b)) branches += (branches.empty() ? "" : "+") + std::string(branch_name(b));
    char line[512];
    std::snprintf(line, sizeof line, "%s,%s,%s,%s,%s,%s,%zu,%zu,%zu,%.6f,%.4f,%s,%s,%zu\n",
                  setting.axis.c_str(), setting.label.c_str(), to_string(setting.strf.integration),
                  to_string(setting.strf.temporal_pool), to_string(setting.strf.spatial_pool),
                  branches.c_str(), setting.strf.r_fine, setting.strf.r_coarse, o.log.size(),
                  o.log.empty() ? 0.0 : o.log.back().total, o.train.rank(1),
                  o.test ? std::to_string(o.test->rank(1)).c_str() : "",
                  o.test ? std::to_string(o.test->mean_ap).c_str() : "", strf_params);
    csv << line << std::flush;
    if (progress)
      *progress << setting.axis << ' ' << setting.label << ": train R@1 " << o.train.rank(1)
                << " (" << o.seconds << " s)" << std::endl;
  }
}

}  // namespace strf
