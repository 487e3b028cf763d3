// Command-line front end: train, infer, eval, decompose, profile.

#include <filesystem>
#include <fstream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "gapnet/check.h"
#include "gapnet/pipeline.h"

namespace fs = std::filesystem;
using namespace gapnet;

namespace {

RunConfig config_from(const std::string& path) {
  return path.empty() ? RunConfig{} : parse_config(path);
}

int cmd_train(const std::string& data, const std::string& config_path, const std::string& out,
              int max_steps, bool no_flip, const std::string& init_ckpt, bool verbose) {
  RunConfig config = config_from(config_path);
  TrainOptions options;
  options.max_steps = max_steps;
  options.flip_augment = !no_flip;
  options.init_checkpoint = init_ckpt;
  options.verbose = verbose;
  const auto result = train(data, config, out, options);
  fmt::print("trained {} steps, final checkpoint: {}\n", result.manifest.step_losses.size(),
             result.final_checkpoint);
  if (!result.manifest.step_losses.empty()) {
    fmt::print("first loss {:.6f}, last loss {:.6f}\n", result.manifest.step_losses.front(),
               result.manifest.step_losses.back());
  }
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& config_path, const std::string& in,
              const std::string& out, int size, bool sides, bool regions) {
  RunConfig config = config_from(config_path);
  InferOptions options;
  options.size = size > 0 ? size : config.infer_size;
  options.emit_sides = sides;
  options.emit_regions = regions;
  const auto result = infer(ckpt, config, in, out, options);
  fmt::print("wrote {} saliency maps to {}\n", result.written.size(), out);
  return 0;
}

int cmd_eval(const std::string& pred, const std::string& gt, const std::string& report_path,
             double wf_beta2) {
  metrics::EvalOptions options;
  options.wf_beta2 = wf_beta2;
  const auto report = metrics::evaluate_dataset(pred, gt, options);
  fmt::print("{}", report.table());
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    if (!out) throw IoError(fmt::format("{}: cannot write", report_path));
    out << report.key_values();
    fmt::print("report written to {}\n", report_path);
  }
  return report.clean() ? 0 : 1;
}

int cmd_decompose(const std::string& in, const std::string& out) {
  GAPNET_REQUIRE(fs::is_directory(in), "{}: not a directory", in);
  fs::create_directories(out);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in)) {
    if (!entry.is_regular_file()) continue;
    std::string ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  GAPNET_REQUIRE(!files.empty(), "{}: no masks found", in);
  for (const auto& file : files) {
    const auto mask = load_mask(file.string());
    write_region_map((fs::path(out) / file.filename()).string(), decompose(mask));
  }
  fmt::print("decomposed {} masks into {}\n", files.size(), out);
  return 0;
}

int cmd_profile(const std::string& preset, const std::string& config_path, int size) {
  RunConfig config = config_from(config_path);
  if (!preset.empty()) config.preset = preset;
  GapNet<float> model(ModelConfig::from_run_config(config), config.seed);

  const auto params = model.count_params();
  fmt::print("parameters ({} preset)\n", config.preset);
  fmt::print("  backbone   {:>12}\n", params.backbone);
  fmt::print("  reduce     {:>12}\n", params.reduce);
  fmt::print("  gfe        {:>12}\n", params.gfe);
  fmt::print("  gpc sites  {:>12}\n", params.gpc_sites);
  fmt::print("  csa sites  {:>12}\n", params.csa_sites);
  fmt::print("  heads      {:>12}\n", params.heads);
  if (params.fusion > 0) fmt::print("  fusion     {:>12}\n", params.fusion);
  fmt::print("  total      {:>12}  ({:.3f} M)\n", params.total, params.total / 1e6);
  for (const auto& [site, count] : params.per_site) {
    fmt::print("    {:<8} {:>10}  ({:.4f} M)\n", site, count, count / 1e6);
  }

  const auto macs = model.count_macs(size, size);
  fmt::print("multiply-accumulates at {}x{}\n", size, size);
  fmt::print("  backbone   {:>14}\n", macs.backbone);
  fmt::print("  reduce     {:>14}\n", macs.reduce);
  fmt::print("  gfe        {:>14}\n", macs.gfe);
  fmt::print("  gpc sites  {:>14}\n", macs.gpc_sites);
  fmt::print("  csa sites  {:>14}\n", macs.csa_sites);
  fmt::print("  heads      {:>14}\n", macs.heads);
  fmt::print("  total      {:>14}  ({:.3f} G MACs, {:.3f} G FLOPs)\n", macs.total, macs.total / 1e9,
             macs.flops() / 1e9);
  for (const auto& [site, trace] : macs.csa_traces) {
    fmt::print("    {}: attention matrix {}x{} (dim {})\n", site, trace.query_len, trace.key_len,
               trace.dim);
  }

  // Published design point for the full-width model at 384x384.
  if (config.preset == "paper") {
    const double ref_params = 1.99e6, ref_gmacs = 1.26e9;
    fmt::print("reference design point: {:.2f} M params, {:.2f} G  -> ratios {:.3f} / {:.3f}\n",
               ref_params / 1e6, ref_gmacs / 1e9, params.total / ref_params, macs.total / ref_gmacs);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gapnet: lightweight granularity-aware salient object detection"};
  app.require_subcommand(1);

  std::string data, config_path, out, ckpt, in, pred, gt, report_path, preset, init_ckpt;
  int max_steps = -1, size = 0, profile_size = 384;
  bool no_flip = false, sides = false, regions = false, verbose = false;
  double wf_beta2 = 1.0;

  auto* train_cmd = app.add_subcommand("train", "train a model on an image or video dataset");
  train_cmd->add_option("--data", data, "dataset root")->required();
  train_cmd->add_option("--config", config_path, "run configuration file");
  train_cmd->add_option("--out", out, "output directory")->required();
  train_cmd->add_option("--steps", max_steps, "cap the number of optimizer steps");
  train_cmd->add_option("--init", init_ckpt, "warm-start checkpoint");
  train_cmd->add_flag("--no-flip", no_flip, "disable the horizontal-flip augmentation");
  train_cmd->add_flag("--verbose", verbose, "per-step progress output");

  auto* infer_cmd = app.add_subcommand("infer", "write saliency maps for a directory of images");
  infer_cmd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  infer_cmd->add_option("--config", config_path, "run configuration file");
  infer_cmd->add_option("--in", in, "input image directory")->required();
  infer_cmd->add_option("--out", out, "output directory")->required();
  infer_cmd->add_option("--size", size, "network input extent (divisible by 32)");
  infer_cmd->add_flag("--sides", sides, "also write the two side-output maps");
  infer_cmd->add_flag("--regions", regions, "also write region decompositions of the output");

  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground-truth masks");
  eval_cmd->add_option("--pred", pred, "prediction directory")->required();
  eval_cmd->add_option("--gt", gt, "ground-truth mask directory")->required();
  eval_cmd->add_option("--report", report_path, "write a machine-readable key=value report");
  eval_cmd->add_option("--wf-beta2", wf_beta2, "beta^2 of the weighted F-measure (default 1.0)");

  auto* dec_cmd = app.add_subcommand("decompose", "write paletted region maps for binary masks");
  dec_cmd->add_option("--in", in, "mask directory")->required();
  dec_cmd->add_option("--out", out, "output directory")->required();

  auto* prof_cmd = app.add_subcommand("profile", "print parameter and MAC breakdowns");
  prof_cmd->add_option("--preset", preset, "paper or toy")->check(CLI::IsMember({"paper", "toy"}));
  prof_cmd->add_option("--config", config_path, "run configuration file");
  prof_cmd->add_option("--size", profile_size, "input extent for the MAC count");

  try {
    app.parse(argc, argv);
    if (train_cmd->parsed()) return cmd_train(data, config_path, out, max_steps, no_flip, init_ckpt, verbose);
    if (infer_cmd->parsed()) return cmd_infer(ckpt, config_path, in, out, size, sides, regions);
    if (eval_cmd->parsed()) return cmd_eval(pred, gt, report_path, wf_beta2);
    if (dec_cmd->parsed()) return cmd_decompose(in, out);
    if (prof_cmd->parsed()) return cmd_profile(preset, config_path, profile_size);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints usage or help text
    return code == 0 ? 0 : 1;
  } catch (const CheckError& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::runtime_error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    fmt::print(stderr, "internal error: {}\n", e.what());
    return 2;
  }
  return 0;
}
