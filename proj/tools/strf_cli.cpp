#include "strf/checkpoint.hpp"
#include "strf/experiments.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>

namespace fs = std::filesystem;
using namespace strf;

namespace {

enum ExitCode { kOk = 0, kFailure = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;

  RunConfig load() const {
    const std::string text = config.empty() ? std::string{} : read_text(config);
    return parse_config_with_overrides(text, config.empty() ? "<defaults>" : config, overrides);
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "Run configuration file");
  cmd->add_option("--set", c.overrides, "Override a config key: section.key=value");
}

void write_pgm(const fs::path& path, const float* map, std::size_t h, std::size_t w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw StorageError("cannot write " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  for (std::size_t i = 0; i < h * w; ++i)
    out.put(char(std::uint8_t(std::lround(std::clamp(map[i], 0.0f, 1.0f) * 255.0f))));
  if (!out) throw StorageError("write failed for " + path.string());
}

std::string file_stem(const std::string& source) {
  std::string s = source;
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

std::vector<std::size_t> report_ranks(const RunConfig& cfg) { return cfg.eval.ranks; }

int cmd_gradcheck(std::uint64_t seed, double epsilon, double tolerance) {
  bool ok = true;
  std::cout << std::left;
  for (const auto& e : gradcheck_suite(seed, epsilon)) {
    const bool pass = e.max_error <= tolerance;
    ok = ok && pass;
    std::cout << std::setw(34) << e.component << std::scientific << std::setprecision(3)
              << e.max_error << "  (" << e.coordinates << " coords, draw " << e.draws << ") " << (pass ? "ok" : "FAIL")
              << '\n';
  }
  std::cout << (ok ? "all components within " : "some components exceed ") << tolerance << '\n';
  return ok ? kOk : kFailure;
}

int cmd_params(const Common& common, std::size_t classes) {
  RunConfig cfg = common.load();
  const std::size_t k = classes ? classes : (cfg.model.classes ? cfg.model.classes : 625);
  std::cout << params_report(cfg.model, k).text;
  return kOk;
}

int cmd_synth(const Common& common, const std::optional<std::uint64_t>& seed, const std::string& out) {
  RunConfig cfg = common.load();
  if (seed) cfg.data.synth.seed = *seed;
  const fs::path root = out.empty() ? cfg.data.root : fs::path(out);
  const DatasetManifest m = generate(cfg.data.synth, root);
  std::size_t frames = 0;
  for (const auto& t : m.tracklets) frames += t.frames.size();
  std::cout << "wrote " << m.tracklets.size() << " tracklets, " << frames << " frames to "
            << root.string() << '\n';
  return kOk;
}

void write_reports(const RunConfig& cfg, const RunOutcome& o, const fs::path& out) {
  write_retrieval_report(o.train, report_ranks(cfg), out / "train_retrieval", "split train (self-retrieval)");
  if (o.test) write_retrieval_report(*o.test, report_ranks(cfg), out / "test_retrieval", "split query/gallery");
}

int cmd_train(const Common& common, const std::string& out_dir) {
  const RunConfig cfg = common.load();
  const fs::path out(out_dir);
  fs::create_directories(out);
  const Dataset ds = load_dataset(cfg.data);
  std::ofstream log(out / "train_log.csv");
  if (!log) throw StorageError("cannot write " + (out / "train_log.csv").string());
  TrainHooks hooks;
  hooks.log_csv = &log;
  hooks.progress = &std::cerr;
  hooks.checkpoint_dir = out / "checkpoints";
  const RunOutcome o = run_experiment(cfg, ds, hooks);
  save_checkpoint(*o.net, out / "checkpoint");
  write_reports(cfg, o, out);
  std::cout << std::fixed << std::setprecision(4) << "steps " << o.log.size() << " final total "
            << (o.log.empty() ? 0.0 : o.log.back().total) << " train R@1 " << o.train.rank(1);
  if (o.test) std::cout << " test R@1 " << o.test->rank(1) << " mAP " << o.test->mean_ap;
  std::cout << '\n';
  return kOk;
}

Network<float> restore(const RunConfig& cfg, const Dataset& ds, const fs::path& checkpoint) {
  Network<float> net(cfg.model.network_spec(ds.classes()), cfg.train.seed);
  load_checkpoint(net, checkpoint);
  return net;
}

int cmd_eval(const Common& common, const std::string& checkpoint, const std::string& out_dir) {
  const RunConfig cfg = common.load();
  const Dataset ds = load_dataset(cfg.data);
  Network<float> net = restore(cfg, ds, checkpoint);
  const RetrievalResult r = evaluate_retrieval(net, ds.query, ds.gallery, cfg.train.T, cfg.train.eval_batch);
  write_retrieval_report(r, report_ranks(cfg), out_dir, "split query/gallery");
  std::cout << std::fixed << std::setprecision(4) << "mAP " << r.mean_ap;
  for (std::size_t k : cfg.eval.ranks)
    if (k >= 1 && k <= r.cmc.size()) std::cout << " R@" << k << ' ' << r.rank(k);
  std::cout << " (skipped " << r.skipped << ")\n";
  return kOk;
}

int cmd_export_attn(const Common& common, const std::string& checkpoint, const std::string& name,
                    const std::string& out_dir, const std::vector<std::size_t>& stages) {
  const RunConfig cfg = common.load();
  const Dataset ds = load_dataset(cfg.data);
  const Tracklet* target = nullptr;
  for (const auto* split : {&ds.train, &ds.query, &ds.gallery})
    for (const auto& t : *split)
      if (t.source == name || file_stem(t.source) == name) target = &t;
  if (!target) throw LoadError("no tracklet named '" + name + "' in the manifest");
  Network<float> net = restore(cfg, ds, checkpoint);
  net.set_training(false);
  net.set_capture(true);
  const fs::path out(out_dir);
  fs::create_directories(out);
  const std::size_t T = cfg.train.T;
  const auto clips = sample_clips(*target, T, 1, ClipMode::test, 0);
  std::size_t written = 0;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    Dims d = clips[c].dims();
    d.insert(d.begin(), 1);
    net.forward_features(clips[c].reshaped(d));
    for (std::size_t stage : stages) {
      const TensorF map = attention_export(net, stage);
      const std::size_t h = map.dim(1), w = map.dim(2);
      for (std::size_t k = 0; k < map.dim(0); ++k) {
        const std::size_t frame = c * T + k;
        if (frame >= target->length()) break;
        char file[64];
        std::snprintf(file, sizeof file, "_%zu_%05zu.pgm", stage, frame);
        write_pgm(out / (file_stem(target->source) + file), map.data() + k * h * w, h, w);
        ++written;
      }
    }
  }
  std::cout << "wrote " << written << " maps to " << out.string() << '\n';
  return kOk;
}

int cmd_ablate(const Common& common, const std::string& out_dir) {
  const RunConfig cfg = common.load();
  const Dataset ds = load_dataset(cfg.data);
  const fs::path out(out_dir);
  fs::create_directories(out);
  std::ofstream csv(out / "ablation.csv");
  if (!csv) throw StorageError("cannot write " + (out / "ablation.csv").string());
  run_ablation(cfg, ds, csv, &std::cerr);
  std::cout << "wrote " << (out / "ablation.csv").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatio-temporal representation factorization for video re-identification"};
  app.require_subcommand(1);

  Common common;
  std::uint64_t gc_seed = 3;
  double gc_tol = 1e-6;
  double gc_eps = 1e-5;
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks (double precision)");
  gradcheck->add_option("--seed", gc_seed, "Input seed");
  gradcheck->add_option("--tolerance", gc_tol, "Maximum relative error");
  gradcheck->add_option("--epsilon", gc_eps, "Central-difference step");

  std::size_t classes = 0;
  auto* params = app.add_subcommand("params", "Per-layer parameter table and STRF accounting");
  add_common(params, common);
  params->add_option("--classes", classes, "Classifier classes (default: config or 625)");

  std::optional<std::uint64_t> synth_seed;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic tracklet dataset");
  add_common(synth, common);
  synth->add_option("--seed", synth_seed, "Generator seed (overrides data.seed)");
  synth->add_option("-o,--out", synth_out, "Dataset root (default: data.root)");

  std::string out_dir = "run";
  auto* train_cmd = app.add_subcommand("train", "Train, checkpoint and score a network");
  add_common(train_cmd, common);
  train_cmd->add_option("-o,--out", out_dir, "Output directory");

  std::string checkpoint;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on the query/gallery split");
  add_common(eval, common);
  eval->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  eval->add_option("-o,--out", out_dir, "Report directory");

  std::string tracklet;
  std::vector<std::size_t> stages{1, 2, 3, 4};
  auto* export_attn = app.add_subcommand("export-attn", "Write per-stage attention maps as PGM");
  add_common(export_attn, common);
  export_attn->add_option("--checkpoint", checkpoint, "Checkpoint directory")->required();
  export_attn->add_option("--tracklet", tracklet, "Tracklet name (manifest directory)")->required();
  export_attn->add_option("--stages", stages, "Stages to export (0 = stem)")->delimiter(',');
  export_attn->add_option("-o,--out", out_dir, "Output directory");

  auto* ablate = app.add_subcommand("ablate", "Train and score every setting of the ablation matrix");
  add_common(ablate, common);
  ablate->add_option("-o,--out", out_dir, "Output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gradcheck) return cmd_gradcheck(gc_seed, gc_eps, gc_tol);
    if (*params) return cmd_params(common, classes);
    if (*synth) return cmd_synth(common, synth_seed, synth_out);
    if (*train_cmd) return cmd_train(common, out_dir);
    if (*eval) return cmd_eval(common, checkpoint, out_dir);
    if (*export_attn) return cmd_export_attn(common, checkpoint, tracklet, out_dir, stages);
    if (*ablate) return cmd_ablate(common, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const LoadError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const StorageError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
