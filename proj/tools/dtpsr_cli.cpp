// dtpsr: dataset building, training, sampling, evaluation, ablation and the
// automated demo, driven by one config.
//
// Exit codes: 0 success, 1 invalid input or config, 2 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "dtpsr/config.hpp"

namespace fs = std::filesystem;
using namespace dtpsr;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> cfg_mode;
  std::optional<double> lambda_s;
  std::optional<std::string> neg_global;
  std::vector<std::string> neg_lf, neg_hf;
};

void add_common(CLI::App* cmd, Common& c, bool guidance) {
  cmd->add_option("--config", c.config_path, "JSON config file (default: $DTPSR_CONFIG)");
  cmd->add_option("--set", c.sets, "Override one field, section.key=value")->take_all();
  cmd->add_option("--seed", c.seed, "Seed for this command");
  if (!guidance) return;
  cmd->add_option("--cfg-mode", c.cfg_mode, "Guidance mode: none, single or multi");
  cmd->add_option("--lambda-s", c.lambda_s, "Guidance scale");
  cmd->add_option("--neg-global", c.neg_global, "Negative global caption");
  cmd->add_option("--neg-lf", c.neg_lf, "Negative LF caption (repeatable)");
  cmd->add_option("--neg-hf", c.neg_hf, "Negative HF caption (repeatable)");
}

RunConfig resolve(const Common& c, const char* seed_section) {
  std::vector<ConfigOverride> cli;
  for (const auto& s : c.sets) cli.push_back(parse_override(s));
  if (c.seed) cli.push_back({seed_section, "seed", std::to_string(*c.seed)});
  if (c.cfg_mode) cli.push_back({"guidance", "mode", Json(*c.cfg_mode).dump()});
  if (c.lambda_s) cli.push_back({"guidance", "lambda_s", Json(*c.lambda_s).dump()});
  if (c.neg_global) cli.push_back({"guidance", "neg_global", Json(*c.neg_global).dump()});
  if (!c.neg_lf.empty()) cli.push_back({"guidance", "neg_lf", Json(c.neg_lf).dump()});
  if (!c.neg_hf.empty()) cli.push_back({"guidance", "neg_hf", Json(c.neg_hf).dump()});
  return load_run_config(c.config_path, process_environment(), cli);
}

Checkpoint require_checkpoint(const std::string& path) {
  if (path.empty() || !fs::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  return load_checkpoint(path);
}

int cmd_build_dataset(const RunConfig& cfg, const std::string& out, std::optional<std::size_t> count,
                      double corrupt_p) {
  const auto s = build_dataset(count.value_or(cfg.dataset.count), out, cfg.dataset.seed, cfg.dataset, corrupt_p);
  std::cout << Json{{"manifest", s.manifest.string()}, {"written", s.written}, {"rejected", s.rejected}}.dump()
            << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& manifest_path, const std::string& out,
              const std::string& resume, std::size_t limit, std::string log) {
  const Manifest m = Manifest::load(manifest_path);
  if (m.records.empty()) throw ValidationError("manifest has no records");
  const std::size_t lr_size = read_ppm(m.resolve(m.records.front().lr_path)).width;
  const EncoderSuite suite(cfg.denoiser, lr_size);
  const auto data = load_examples(m, suite.view(static_cast<std::size_t>(cfg.dataset.downscale_factor)), limit);
  Denoiser model(cfg.denoiser);
  Trainer trainer(model, cfg.diffusion, cfg.train);
  if (!resume.empty()) trainer.resume(require_checkpoint(resume));
  if (log.empty()) log = out + ".loss.jsonl";
  const auto curve = trainer.run(data, log, out);
  Json summary{{"checkpoint", out}, {"loss_log", log}, {"iterations", trainer.iteration()}};
  if (!curve.empty()) {
    summary["first_loss"] = curve.front().loss;
    summary["last_loss"] = curve.back().loss;
  }
  std::cout << summary.dump() << '\n';
  return 0;
}

CaptionSet captions_for(const std::string& captions_path, const std::string& manifest_path,
                        const std::string& record) {
  if (!captions_path.empty()) {
    std::ifstream f(captions_path);
    if (!f) throw ValidationError("cannot open captions file " + captions_path);
    try {
      return captions_from_json(Json::parse(f));
    } catch (const Json::parse_error& e) {
      throw ValidationError(std::string("captions file: ") + e.what());
    }
  }
  if (manifest_path.empty() || record.empty())
    throw ValidationError("sample needs --captions or --manifest with --record");
  for (const auto& r : Manifest::load(manifest_path).records)
    if (r.record_id == record) return r.captions;
  throw ValidationError("record " + record + " not in manifest");
}

int cmd_sample(const RunConfig& cfg, const std::string& ckpt_path, const std::string& lr_path,
               const std::string& out, const CaptionSet& captions) {
  const Checkpoint ckpt = require_checkpoint(ckpt_path);
  const Denoiser model = model_from_checkpoint(ckpt);
  const Image lr = read_ppm(lr_path);
  if (lr.width != lr.height) throw ShapeError("LR image must be square");
  const EncoderSuite suite(model.config(), lr.width);
  const NoiseSchedule base = ckpt.diffusion.schedule();
  check_sampling_steps(base, cfg.diffusion.sampling_steps);
  std::size_t calls = 0;
  const Image sr = restore(model, respace(base, cfg.diffusion.sampling_steps),
                           suite.view(static_cast<std::size_t>(cfg.dataset.downscale_factor)), lr, captions,
                           cfg.guidance, CounterRng(cfg.eval.seed, "cli.sample").bits(0), &calls);
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  write_ppm(out, sr);
  std::cout << Json{{"output", out},
                    {"width", sr.width},
                    {"height", sr.height},
                    {"steps", cfg.diffusion.sampling_steps},
                    {"denoiser_calls", calls},
                    {"guidance", cfg.guidance}}
                   .dump()
            << '\n';
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& grid_name, const std::string& manifest,
               const std::string& ckpt, const std::string& out) {
  const AblationGrid grid = make_grid(grid_name, cfg.guidance, cfg.eval.robustness_p);
  if (!fs::exists(ckpt)) throw std::runtime_error("checkpoint not found: " + ckpt);
  const auto reports = run_ablation(grid, manifest, ckpt, cfg.eval, cfg.diffusion.sampling_steps, out);
  std::cout << report_table(reports);
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& grid_name, const std::string& manifest,
                 const std::string& ckpt, const std::string& out, double corrupt_p) {
  if (!grid_name.empty()) return cmd_ablate(cfg, grid_name, manifest, ckpt, out);
  AblationGrid grid{"evaluate", {{"DTPSR", BranchFlags{}, cfg.guidance, corrupt_p}}};
  const auto reports = run_ablation(grid, manifest, ckpt, cfg.eval, cfg.diffusion.sampling_steps, out);
  std::cout << report_table(reports);
  return 0;
}

int cmd_demo(const RunConfig& cfg, const std::string& ckpt_path, const std::string& out) {
  const Checkpoint ckpt = require_checkpoint(ckpt_path);
  const Denoiser model = model_from_checkpoint(ckpt);
  const EncoderSuite suite(model.config(), cfg.dataset.hr_size / static_cast<std::size_t>(cfg.dataset.downscale_factor));
  const NoiseSchedule base = ckpt.diffusion.schedule();
  check_sampling_steps(base, cfg.diffusion.sampling_steps);
  const DemoReport r = run_demo(model, respace(base, cfg.diffusion.sampling_steps),
                                suite.view(static_cast<std::size_t>(cfg.dataset.downscale_factor)), cfg.dataset,
                                cfg.guidance, cfg.eval.seed, out, file_id(ckpt_path));
  std::cout << Json(r).dump() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled text-prior super-resolution toolkit"};
  app.require_subcommand(1);

  Common common;
  std::string out, manifest, ckpt, resume, lr, captions, record, grid, log;
  std::optional<std::size_t> count;
  std::size_t limit = 0;
  double corrupt_p = 0.0;

  auto* build = app.add_subcommand("build-dataset", "Render synthetic scenes, captions and LR inputs");
  add_common(build, common, false);
  build->add_option("--out", out, "Output directory")->required();
  build->add_option("--count", count, "Number of records (default: dataset.count)");
  build->add_option("--corrupt-p", corrupt_p, "Word corruption probability for stored captions");

  auto* train = app.add_subcommand("train", "Train the denoiser on a manifest");
  add_common(train, common, false);
  train->add_option("--manifest", manifest, "manifest.jsonl")->required();
  train->add_option("--out", out, "Checkpoint path")->required();
  train->add_option("--resume", resume, "Checkpoint to resume from");
  train->add_option("--limit", limit, "Use only the first N records");
  train->add_option("--log", log, "Loss log (default: <out>.loss.jsonl)");

  auto* sample_cmd = app.add_subcommand("sample", "Restore one LR image");
  add_common(sample_cmd, common, true);
  sample_cmd->add_option("--ckpt", ckpt, "Checkpoint")->required();
  sample_cmd->add_option("--lr", lr, "LR image (binary PPM)")->required();
  sample_cmd->add_option("--out", out, "Output PPM")->required();
  sample_cmd->add_option("--captions", captions, "Captions JSON {global, lf, hf}");
  sample_cmd->add_option("--manifest", manifest, "Manifest to take captions from");
  sample_cmd->add_option("--record", record, "Record id within --manifest");

  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint on a manifest");
  add_common(evaluate, common, true);
  evaluate->add_option("--manifest", manifest, "manifest.jsonl")->required();
  evaluate->add_option("--ckpt", ckpt, "Checkpoint")->required();
  evaluate->add_option("--out", out, "Report directory")->required();
  evaluate->add_option("--grid", grid, "Ablation grid")->check(CLI::IsMember(grid_names()));
  evaluate->add_option("--corrupt-p", corrupt_p, "Caption corruption probability at evaluation");

  auto* ablate = app.add_subcommand("ablate", "Run an ablation grid");
  add_common(ablate, common, true);
  ablate->add_option("--grid", grid, "table3, table4, table5, table6 or robustness")
      ->required()
      ->check(CLI::IsMember(grid_names()));
  ablate->add_option("--manifest", manifest, "manifest.jsonl")->required();
  ablate->add_option("--ckpt", ckpt, "Checkpoint")->required();
  ablate->add_option("--out", out, "Report directory")->required();

  auto* demo = app.add_subcommand("demo", "Segment, caption and restore a fresh synthetic scene");
  add_common(demo, common, true);
  demo->add_option("--ckpt", ckpt, "Checkpoint")->required();
  demo->add_option("--out", out, "Artifact directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*build) return cmd_build_dataset(resolve(common, "dataset"), out, count, corrupt_p);
    if (*train) return cmd_train(resolve(common, "train"), manifest, out, resume, limit, log);
    if (*sample_cmd) {
      const RunConfig cfg = resolve(common, "eval");
      return cmd_sample(cfg, ckpt, lr, out, captions_for(captions, manifest, record));
    }
    if (*evaluate) {
      if (!(corrupt_p >= 0.0 && corrupt_p <= 1.0)) throw ValidationError("--corrupt-p must lie in [0, 1]");
      return cmd_evaluate(resolve(common, "eval"), grid, manifest, ckpt, out, corrupt_p);
    }
    if (*ablate) return cmd_ablate(resolve(common, "eval"), grid, manifest, ckpt, out);
    if (*demo) return cmd_demo(resolve(common, "eval"), ckpt, out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
