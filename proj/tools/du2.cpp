// Command-line front end: dataset generation, plane-sweep ground truth,
// training, inference, evaluation, ablations and gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "du2/config.hpp"
#include "du2/errors.hpp"
#include "du2/eval.hpp"
#include "du2/gradcheck_suite.hpp"
#include "du2/image_io.hpp"
#include "du2/mvs.hpp"
#include "du2/synthgen.hpp"
#include "du2/train.hpp"

namespace fs = std::filesystem;
using namespace du2;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string refine_mode;
  std::string fusion_mode;
  std::optional<double> gamma;
  std::optional<std::size_t> fusion_channels;
};

void add_config_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON run config");
  cmd->add_option("--seed", f.seed, "Run seed");
}

void add_model_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--refine-mode", f.refine_mode, "rgb_only | dp_only | dp_image_warp | rgb_plus_dp");
  cmd->add_option("--fusion-mode", f.fusion_mode, "dc_only | dp_dc_2d | dp_dc_cost | dp_dc_conf");
  cmd->add_option("--gamma", f.gamma, "Affine fit regularization");
  cmd->add_option("--fusion-channels", f.fusion_channels, "Hidden channels of the fusion network");
}

// Defaults, then `base` (a run directory's config), then --config, then flags.
RunConfig resolve(const CommonFlags& f, const std::optional<fs::path>& base = std::nullopt) {
  RunConfig c;
  if (base && fs::exists(*base)) c = load_run_config(*base);
  if (!f.config.empty()) c = load_run_config(f.config, c);
  if (f.seed) {
    c.seed = *f.seed;
    c.data.seed = *f.seed;
    c.mvs.scene.seed = *f.seed;
  }
  if (!f.refine_mode.empty()) c.model.refine.mode = parse_refine_mode(f.refine_mode);
  if (!f.fusion_mode.empty()) c.model.fusion_mode = parse_fusion_mode(f.fusion_mode);
  if (f.gamma) {
    if (*f.gamma < 0) throw ConfigError("--gamma must be nonnegative");
    c.model.gamma = *f.gamma;
  }
  if (f.fusion_channels) {
    if (*f.fusion_channels == 0) throw ConfigError("--fusion-channels must be positive");
    c.model.fusion.hidden = *f.fusion_channels;
  }
  return c;
}

std::vector<std::string> sample_ids(const fs::path& dir) {
  std::vector<std::string> ids;
  for (const auto& p : list_samples(dir)) ids.push_back(p.filename().string());
  return ids;
}

DualNet restore(const RunConfig& c, const fs::path& run_dir) {
  Rng rng(c.seed);
  DualNet net(c.model, rng);
  ParameterSet params;
  net.register_parameters(params);
  load_checkpoint(run_dir / "checkpoint.bin", params, nullptr);
  return net;
}

void write_disparity(const fs::path& stem, const Tensor& d) {
  write_pfm(stem.string() + ".pfm", d);
  const auto [lo, hi] = value_range(d);
  write_png(stem.string() + ".png", colorize(d, lo, hi));
  std::printf("%s.png  range [%.4f, %.4f]\n", stem.string().c_str(), lo, hi);
}

void print_mean(const std::string& label, const SampleEval& m) {
  std::printf("%-24s mae %.4f  rmse %.4f  bad2 %.2f%%  occ_mae %.4f  occ_rmse %.4f\n", label.c_str(), m.all.mae,
              m.all.rmse, m.all.bad[1], m.occluded.mae, m.occluded.rmse);
}

int cmd_gen(const CommonFlags& f, std::optional<std::size_t> n_train, std::optional<std::size_t> n_test,
            const std::string& family) {
  RunConfig c = resolve(f);
  if (n_train) c.n_train = *n_train;
  if (n_test) c.n_test = *n_test;
  if (!family.empty()) c.data.family = parse_family(family);
  const fs::path out = f.out;
  make_dataset(scene_config(c), c.n_train, c.n_test, out);
  save_run_config(out / "config.json", c);
  std::printf("wrote %zu training and %zu test samples to %s\n", c.n_train, c.n_test, out.string().c_str());
  return kOk;
}

int cmd_gt(const CommonFlags& f) {
  const RunConfig c = resolve(f);
  const fs::path out = f.out;
  const MultiviewScene scene = generate_multiview(c.mvs.scene);
  write_multiview(out / "views", scene);
  std::vector<CameraView> views{scene.reference};
  views.insert(views.end(), scene.neighbors.begin(), scene.neighbors.end());
  const auto planes = inverse_depth_planes(c.mvs.scene.z_near, c.mvs.scene.z_far, c.mvs.planes);
  const MultiviewGroundTruth gt = multiview_ground_truth(views, planes, c.mvs.bilateral, c.mvs.cutoff_px);
  write_pfm(out / "depth.pfm", gt.depth[0]);
  write_pfm(out / "confidence.pfm", gt.confidence);
  const auto [lo, hi] = value_range(gt.depth[0]);
  write_png(out / "depth.png", colorize(gt.depth[0], lo, hi));
  save_run_config(out / "config.json", c);

  // Agreement with the renderer's depth, in plane spacings of inverse depth.
  const double spacing = std::abs(1.0 / c.mvs.scene.z_far - 1.0 / c.mvs.scene.z_near) /
                         static_cast<double>(std::max<std::size_t>(1, c.mvs.planes - 1));
  std::size_t confident = 0, accurate = 0;
  for (std::size_t i = 0; i < gt.confidence.size(); ++i) {
    if (gt.confidence[i] <= 0.5) continue;
    ++confident;
    accurate += std::abs(1.0 / gt.depth[0][i] - 1.0 / scene.depth_reference[i]) <= spacing;
  }
  std::printf("depth range [%.4f, %.4f] m, %zu planes\n", lo, hi, c.mvs.planes);
  std::printf("confident pixels %.1f%%, within one plane spacing %.1f%%\n",
              100.0 * static_cast<double>(confident) / static_cast<double>(gt.confidence.size()),
              confident ? 100.0 * static_cast<double>(accurate) / static_cast<double>(confident) : 0.0);
  return kOk;
}

int cmd_train(const CommonFlags& f, const std::string& data, std::optional<std::size_t> steps,
              std::optional<double> lr, bool resume) {
  const fs::path out = f.out;
  RunConfig c = resolve(f, resume ? std::optional<fs::path>(out / "config.json") : std::nullopt);
  if (steps) c.train.steps = *steps;
  if (lr) {
    if (*lr < 0) throw ConfigError("--lr must be nonnegative");
    c.train.lr = *lr;
  }
  const auto samples = load_samples(fs::path(data) / "train");
  Rng rng(c.seed);
  DualNet net(c.model, rng);
  TrainOptions opts{out, resume, 100};
  const auto log = train_model(net, samples, c, opts);
  if (!log.empty()) {
    std::printf("steps %zu..%zu  loss %.4f -> %.4f\n", log.front().step + 1, log.back().step + 1, log.front().total,
                log.back().total);
  }
  std::printf("checkpoint %s\n", (out / "checkpoint.bin").string().c_str());
  return kOk;
}

int cmd_infer(const CommonFlags& f, const std::string& run, const std::string& sample_dir) {
  const RunConfig c = resolve(f, fs::path(run) / "config.json");
  const DualNet net = restore(c, run);
  const SceneSample s = read_sample(sample_dir);
  ModelOutputs out;
  {
    NoGradGuard guard;
    out = net(model_inputs(s));
  }
  const fs::path dir = f.out;
  fs::create_directories(dir);
  write_disparity(dir / "d_ref", out.d_ref);
  write_disparity(dir / "d_unref", *out.loss.d_unref);
  std::printf("alpha_hat %.6f  beta_hat %.6f\n", out.affine.alpha(), out.affine.beta());
  return kOk;
}

int cmd_eval(const CommonFlags& f, const std::string& run, const std::string& data, bool affine_fit, bool oracle) {
  const fs::path test_dir = fs::path(data) / "test";
  const auto samples = load_samples(test_dir);
  const auto ids = sample_ids(test_dir);
  std::vector<SampleEval> rows;
  RunConfig c = resolve(f, run.empty() ? std::nullopt : std::optional<fs::path>(fs::path(run) / "config.json"));
  if (affine_fit) c.eval_affine_fit = true;
  if (oracle) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      rows.push_back(score_prediction(ids[i], samples[i].d_gt, samples[i], c.eval_affine_fit));
    }
  } else {
    if (run.empty()) throw UsageError("eval: --run is required unless --oracle is given");
    rows = evaluate_model(restore(c, run), samples, ids, c.eval_affine_fit);
  }
  const fs::path out = f.out.empty() ? fs::path(run) / "metrics.csv" : fs::path(f.out);
  write_metrics_csv(out, rows);
  print_mean("mean", aggregate(rows));
  std::printf("metrics %s\n", out.string().c_str());
  return kOk;
}

int cmd_gradcheck(const std::string& filter, const std::string& corrupt, std::uint64_t seed) {
  GradCheckSuiteOptions o;
  o.filter = filter;
  o.corrupt = corrupt;
  o.seed = seed;
  if (!corrupt.empty()) {
    const auto names = gradcheck_suite_names();
    if (std::find(names.begin(), names.end(), corrupt) == names.end()) {
      throw UsageError("gradcheck: unknown check '" + corrupt + "'");
    }
  }
  bool ok = true;
  for (const auto& r : run_gradcheck_suite(o)) {
    std::printf("%-26s %-4s max rel err %.3e  (%zu entries)\n", r.name.c_str(), r.passed ? "ok" : "FAIL",
                r.max_rel_error, r.entries);
    if (!r.passed) {
      ok = false;
      std::fprintf(stderr, "gradient check failed: %s\n", r.name.c_str());
    }
  }
  return ok ? kOk : kCheckFailed;
}

int cmd_ablate(const CommonFlags& f, const std::string& data, const std::string& set, std::optional<std::size_t> steps) {
  const RunConfig base = resolve(f);
  std::vector<RunConfig> variants;
  std::vector<std::string> names;
  if (set == "fusion" || set == "all") {
    for (const char* m : {"dc_only", "dp_dc_2d", "dp_dc_cost", "dp_dc_conf"}) {
      RunConfig c = base;
      c.model.fusion_mode = parse_fusion_mode(m);
      variants.push_back(c);
      names.push_back(m);
    }
  }
  if (set == "refine" || set == "all") {
    for (const char* m : {"rgb_only", "dp_only", "dp_image_warp", "rgb_plus_dp"}) {
      RunConfig c = base;
      c.model.refine.mode = parse_refine_mode(m);
      variants.push_back(c);
      names.push_back(m);
    }
  }
  if (variants.empty()) throw UsageError("ablate: --set must be fusion, refine or all");
  const auto train = load_samples(fs::path(data) / "train");
  const fs::path test_dir = fs::path(data) / "test";
  const auto test = load_samples(test_dir);
  const auto ids = sample_ids(test_dir);
  const fs::path out = f.out;
  fs::create_directories(out);
  std::ofstream table(out / "ablation.csv");
  table << "variant,fusion_mode,refine_mode,mae,rmse,bad_2,occ_mae,occ_rmse,occ_bad_2\n";
  for (std::size_t i = 0; i < variants.size(); ++i) {
    RunConfig& c = variants[i];
    if (steps) c.train.steps = *steps;
    Rng rng(c.seed);
    DualNet net(c.model, rng);
    const fs::path dir = out / names[i];
    train_model(net, train, c, {dir, false, 0});
    const auto rows = evaluate_model(net, test, ids, c.eval_affine_fit);
    write_metrics_csv(dir / "metrics.csv", rows);
    const SampleEval m = aggregate(rows);
    print_mean(names[i], m);
    char line[256];
    std::snprintf(line, sizeof line, "%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", names[i].c_str(),
                  std::string(to_string(net.config().fusion_mode)).c_str(),
                  std::string(to_string(net.config().refine.mode)).c_str(), m.all.mae, m.all.rmse, m.all.bad[1],
                  m.occluded.mae, m.occluded.rmse, m.occluded.bad[1]);
    table << line;
  }
  std::printf("table %s\n", (out / "ablation.csv").string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-camera and dual-pixel depth estimation at desk scale"};
  app.require_subcommand(1);
  CommonFlags f;

  std::optional<std::size_t> n_train, n_test, steps;
  std::optional<double> lr;
  std::string family, data, run, sample, filter, corrupt, set = "all";
  bool resume = false, affine_fit = false, oracle = false;
  std::uint64_t gc_seed = 1;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic train/test dataset");
  add_config_flags(gen, f);
  gen->add_option("--out", f.out, "Dataset directory")->required();
  gen->add_option("--train", n_train, "Number of training samples");
  gen->add_option("--test", n_test, "Number of test samples");
  gen->add_option("--family", family, "occluders | stripes-band | plane");

  auto* gt = app.add_subcommand("gt", "Plane-sweep ground truth on a synthetic multi-view scene");
  add_config_flags(gt, f);
  gt->add_option("--out", f.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  add_config_flags(train, f);
  add_model_flags(train, f);
  train->add_option("--data", data, "Dataset directory (with train/)")->required();
  train->add_option("--out", f.out, "Run directory")->required();
  train->add_option("--steps", steps, "Training steps");
  train->add_option("--lr", lr, "Learning rate");
  train->add_flag("--resume", resume, "Continue from <out>/checkpoint.bin");

  auto* infer = app.add_subcommand("infer", "Run a trained model on one sample");
  add_config_flags(infer, f);
  infer->add_option("--run", run, "Run directory")->required();
  infer->add_option("--sample", sample, "Sample directory")->required();
  infer->add_option("--out", f.out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate on the test split and write a metrics CSV");
  add_config_flags(eval, f);
  eval->add_option("--run", run, "Run directory");
  eval->add_option("--data", data, "Dataset directory (with test/)")->required();
  eval->add_option("--out", f.out, "CSV path (default <run>/metrics.csv)");
  eval->add_flag("--affine-fit", affine_fit, "Score after a best-fit affine map of the prediction");
  eval->add_flag("--oracle", oracle, "Score the ground truth itself");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--filter", filter, "Only checks whose name contains this");
  gc->add_option("--corrupt", corrupt, "Perturb the analytic gradient of this check");
  gc->add_option("--seed", gc_seed, "Seed");

  auto* ablate = app.add_subcommand("ablate", "Train and evaluate each ablation variant");
  add_config_flags(ablate, f);
  add_model_flags(ablate, f);
  ablate->add_option("--data", data, "Dataset directory")->required();
  ablate->add_option("--out", f.out, "Output directory")->required();
  ablate->add_option("--set", set, "fusion | refine | all");
  ablate->add_option("--steps", steps, "Training steps per variant");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen(f, n_train, n_test, family);
    if (gt->parsed()) return cmd_gt(f);
    if (train->parsed()) return cmd_train(f, data, steps, lr, resume);
    if (infer->parsed()) return cmd_infer(f, run, sample);
    if (eval->parsed()) return cmd_eval(f, run, data, affine_fit, oracle);
    if (gc->parsed()) return cmd_gradcheck(filter, corrupt, gc_seed);
    if (ablate->parsed()) return cmd_ablate(f, data, set, steps);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kCheckFailed;
  }
  return kUsage;
}
