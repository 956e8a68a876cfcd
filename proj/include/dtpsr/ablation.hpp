#pragma once

// Evaluation over a manifest: ablation grids, per-configuration metric
// reports, and their persisted tables.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dtpsr/pipeline.hpp"

namespace dtpsr {

struct EvalConfig {
  std::size_t max_records = 8;  // 0: every record in the manifest
  double robustness_p = 0.3;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(robustness_p >= 0.0 && robustness_p <= 1.0))
      throw ValidationError("eval.robustness_p must lie in [0, 1]");
  }
  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

inline void to_json(Json& j, const EvalConfig& e) {
  j = Json{{"max_records", e.max_records},
           {"robustness_p", e.robustness_p},
           {"seed", e.seed}};
}

inline void from_json(const Json& j, EvalConfig& e) {
  constexpr std::string_view s = "eval";
  reject_unknown_keys(j, {"max_records", "robustness_p", "seed"}, s);
  read_opt(j, "max_records", e.max_records, s);
  read_opt(j, "robustness_p", e.robustness_p, s);
  read_opt(j, "seed", e.seed, s);
  e.validate();
}

struct BranchFlags {
  bool gtca = true;
  bool lfca = true;
  bool hfca = true;
  bool lrca = true;
  bool mixed = false;  // mixed LF+HF sentences injected into both local branches

  void apply(Denoiser& model) const {
    DenoiserConfig c = model.config();
    c.enable_gtca = gtca;
    c.enable_lfca = lfca;
    c.enable_hfca = hfca;
    c.enable_lrca = lrca;
    c.mixed_frequency_mode = mixed;
    model.set_branch_flags(c);
  }
  static BranchFlags of(const DenoiserConfig& c) {
    return {c.enable_gtca, c.enable_lfca, c.enable_hfca, c.enable_lrca, c.mixed_frequency_mode};
  }
  friend bool operator==(const BranchFlags&, const BranchFlags&) = default;
};

inline void to_json(Json& j, const BranchFlags& f) {
  j = Json{{"gtca", f.gtca}, {"lfca", f.lfca}, {"hfca", f.hfca}, {"lrca", f.lrca}, {"mixed", f.mixed}};
}

inline void from_json(const Json& j, BranchFlags& f) {
  constexpr std::string_view s = "branch flags";
  reject_unknown_keys(j, {"gtca", "lfca", "hfca", "lrca", "mixed"}, s);
  read_opt(j, "gtca", f.gtca, s);
  read_opt(j, "lfca", f.lfca, s);
  read_opt(j, "hfca", f.hfca, s);
  read_opt(j, "lrca", f.lrca, s);
  read_opt(j, "mixed", f.mixed, s);
}

struct AblationEntry {
  std::string name;
  BranchFlags flags;
  GuidanceSpec guidance;
  double corrupt_p = 0.0;
};

struct AblationGrid {
  std::string name;
  std::vector<AblationEntry> entries;

  void validate() const {
    std::set<std::string> seen;
    for (const auto& e : entries) {
      if (e.name.empty()) throw ValidationError("grid " + name + ": empty configuration name");
      if (!seen.insert(e.name).second) throw ValidationError("grid " + name + ": duplicate name " + e.name);
      e.guidance.validate();
      if (!(e.corrupt_p >= 0.0 && e.corrupt_p <= 1.0))
        throw ValidationError("grid " + name + ": corrupt_p out of range in " + e.name);
      if (e.flags.mixed && !(e.flags.lfca && e.flags.hfca))
        throw ValidationError("grid " + name + ": mixed mode needs both local branches in " + e.name);
    }
  }
};

inline const std::vector<std::string>& grid_names() {
  static const std::vector<std::string> names{"table3", "table4", "table5", "table6", "robustness"};
  return names;
}

/// `guidance` is the spec used wherever the grid does not vary guidance.
inline AblationGrid make_grid(std::string_view name, const GuidanceSpec& guidance = {},
                              double robustness_p = 0.3) {
  AblationGrid g{std::string(name), {}};
  auto entry = [&](std::string n, BranchFlags f, GuidanceSpec gs = {}, double p = 0.0) {
    g.entries.push_back({std::move(n), f, gs, p});
  };
  if (name == "table3") {
    entry("Exp 3-1", {false, false, false, true, false}, guidance);
    entry("Exp 3-2", {false, true, true, true, false}, guidance);
    entry("Exp 3-3", {true, false, false, true, false}, guidance);
    entry("Exp 3-4", {true, true, true, true, false}, guidance);
  } else if (name == "table4") {
    entry("Exp 4-1", {true, true, false, true, false}, guidance);
    entry("Exp 4-2", {true, false, true, true, false}, guidance);
    entry("Exp 4-3", {true, true, true, true, false}, guidance);
  } else if (name == "table5") {
    entry("Exp 5-1", {true, true, true, true, true}, guidance);
    entry("Exp 5-2", {true, true, true, true, false}, guidance);
  } else if (name == "table6") {
    for (auto [n, m] : {std::pair{"None", GuidanceMode::kNone}, std::pair{"Single", GuidanceMode::kSingle},
                        std::pair{"Multi", GuidanceMode::kMulti}}) {
      GuidanceSpec gs = guidance;
      gs.mode = m;
      entry(n, {}, gs);
    }
  } else if (name == "robustness") {
    entry("DTPSR", {}, guidance, 0.0);
    entry("DTPSR-C", {}, guidance, robustness_p);
  } else {
    throw ValidationError("unknown grid '" + std::string(name) + "'");
  }
  return g;
}

struct RunMetadata {
  std::string checkpoint_id;
  GuidanceSpec guidance;
  BranchFlags flags;
  double corrupt_p = 0.0;
  std::uint64_t seed = 0;
  int sampling_steps = 0;
  friend bool operator==(const RunMetadata&, const RunMetadata&) = default;
};

/// Per-image scores, their means, and how the run was produced.
struct MetricReport {
  std::string name;
  std::vector<ImageMetrics> images;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::optional<double> mean_perceptual;
  RunMetadata meta;

  void set_means() {
    if (images.empty()) {
      mean_psnr = mean_ssim = 0.0;
      mean_perceptual.reset();
      return;
    }
    const ImageMetrics m = mean_metrics(images);
    mean_psnr = m.psnr;
    mean_ssim = m.ssim;
    mean_perceptual = m.perceptual;
  }

  void validate() const {
    for (const auto& im : images) {
      if (!(im.ssim >= -1.0 && im.ssim <= 1.0)) throw ValidationError(name + ": ssim outside [-1, 1]");
      if (!(im.psnr > 0.0)) throw ValidationError(name + ": psnr must be positive or infinite");
    }
    if (images.empty()) return;
    const ImageMetrics m = mean_metrics(images);
    auto close = [](double a, double b) { return a == b || std::abs(a - b) <= 1e-9; };
    if (!close(m.psnr, mean_psnr) || !close(m.ssim, mean_ssim))
      throw ValidationError(name + ": aggregate does not match per-image values");
  }
  friend bool operator==(const MetricReport&, const MetricReport&) = default;
};

inline void to_json(Json& j, const RunMetadata& m) {
  j = Json{{"checkpoint_id", m.checkpoint_id}, {"guidance", m.guidance},      {"branches", m.flags},
           {"corrupt_p", m.corrupt_p},         {"seed", m.seed}, {"sampling_steps", m.sampling_steps}};
}

inline void from_json(const Json& j, RunMetadata& m) {
  reject_unknown_keys(j, {"checkpoint_id", "guidance", "branches", "corrupt_p", "seed", "sampling_steps"},
                      "run metadata");
  try {
    m.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    m.guidance = j.at("guidance").get<GuidanceSpec>();
    m.flags = j.at("branches").get<BranchFlags>();
    m.corrupt_p = j.at("corrupt_p").get<double>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.sampling_steps = j.at("sampling_steps").get<int>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("run metadata: ") + e.what());
  }
}

inline void to_json(Json& j, const MetricReport& r) {
  j = Json{{"name", r.name},
           {"images", r.images},
           {"mean", {{"psnr_db", real_to_json(r.mean_psnr)},
                     {"ssim", r.mean_ssim},
                     {"perceptual", r.mean_perceptual ? Json(*r.mean_perceptual) : Json("unavailable")}}},
           {"meta", r.meta}};
}

inline void from_json(const Json& j, MetricReport& r) {
  reject_unknown_keys(j, {"name", "images", "mean", "meta"}, "metric report");
  try {
    r.name = j.at("name").get<std::string>();
    r.images = j.at("images").get<std::vector<ImageMetrics>>();
    const Json& m = j.at("mean");
    reject_unknown_keys(m, {"psnr_db", "ssim", "perceptual"}, "metric report mean");
    r.mean_psnr = real_from_json(m.at("psnr_db"));
    r.mean_ssim = m.at("ssim").get<double>();
    if (m.at("perceptual").is_string()) r.mean_perceptual.reset();
    else r.mean_perceptual = m.at("perceptual").get<double>();
    r.meta = j.at("meta").get<RunMetadata>();
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("metric report: ") + e.what());
  }
  r.validate();
}

inline std::string serialize_report(const MetricReport& r) { return Json(r).dump(); }

inline MetricReport parse_report(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("metric report: ") + e.what());
  }
  return j.get<MetricReport>();
}

inline std::vector<MetricReport> read_reports(const std::filesystem::path& jsonl) {
  std::ifstream f(jsonl);
  if (!f) throw std::runtime_error("cannot open " + jsonl.string());
  std::vector<MetricReport> out;
  for (std::string line; std::getline(f, line);)
    if (!line.empty()) out.push_back(parse_report(line));
  return out;
}

inline std::string format_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string report_table(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os << "name\tgtca\tlfca\thfca\tlrca\tmixed\tguidance\tlambda_s\tcorrupt_p\tseed\timages\tpsnr_db\tssim\tperceptual\n";
  for (const auto& r : reports) {
    const auto& f = r.meta.flags;
    os << r.name << '\t' << f.gtca << '\t' << f.lfca << '\t' << f.hfca << '\t' << f.lrca << '\t' << f.mixed << '\t'
       << guidance_mode_name(r.meta.guidance.mode) << '\t' << format_real(r.meta.guidance.lambda_s) << '\t'
       << format_real(r.meta.corrupt_p) << '\t' << r.meta.seed << '\t' << r.images.size() << '\t'
       << format_real(r.mean_psnr) << '\t' << format_real(r.mean_ssim) << '\t'
       << (r.mean_perceptual ? format_real(*r.mean_perceptual) : "unavailable") << '\n';
  }
  return os.str();
}

/// Writes <grid>.tsv and <grid>.jsonl into `out_dir`.
inline void write_reports(const std::filesystem::path& out_dir, const std::string& grid,
                          const std::vector<MetricReport>& reports) {
  std::filesystem::create_directories(out_dir);
  std::ofstream tsv(out_dir / (grid + ".tsv"), std::ios::binary | std::ios::trunc);
  tsv << report_table(reports);
  std::ofstream jsonl(out_dir / (grid + ".jsonl"), std::ios::binary | std::ios::trunc);
  for (const auto& r : reports) jsonl << serialize_report(r) << '\n';
  if (!tsv || !jsonl) throw std::runtime_error("failed writing reports to " + out_dir.string());
}

/// Clean-minus-corrupted mean differences for a robustness pair.
inline Json robustness_delta(const MetricReport& clean, const MetricReport& corrupted) {
  return Json{{"clean", clean.name},
              {"corrupted", corrupted.name},
              {"corrupt_p", corrupted.meta.corrupt_p},
              {"clean_psnr_db", real_to_json(clean.mean_psnr)},
              {"corrupted_psnr_db", real_to_json(corrupted.mean_psnr)},
              {"delta_psnr_db", real_to_json(clean.mean_psnr - corrupted.mean_psnr)},
              {"clean_ssim", clean.mean_ssim},
              {"corrupted_ssim", corrupted.mean_ssim},
              {"delta_ssim", clean.mean_ssim - corrupted.mean_ssim}};
}

/// Evaluates every grid entry on the same records and sample seeds. The
/// model's branch flags are restored afterwards.
inline std::vector<MetricReport> evaluate_grid(const AblationGrid& grid, Denoiser& model, const Manifest& manifest,
                                               const NoiseSchedule& base, int sampling_steps, const Encoders& enc,
                                               const EvalConfig& cfg, const std::string& checkpoint_id,
                                               const PerceptualMetric& perceptual = {}) {
  grid.validate();
  cfg.validate();
  check_sampling_steps(base, sampling_steps);
  const SamplingPlan plan = respace(base, sampling_steps);
  std::vector<const AnnotationRecord*> records;
  for (const auto& r : manifest.records) {
    if (cfg.max_records && records.size() == cfg.max_records) break;
    records.push_back(&r);
  }
  std::vector<Image> hrs, lrs;
  for (const auto* r : records) {
    hrs.push_back(read_ppm(manifest.resolve(r->hr_path)));
    lrs.push_back(read_ppm(manifest.resolve(r->lr_path)));
  }
  const DenoiserConfig original = model.config();
  const CounterRng sample_seeds(cfg.seed, "eval.sample"), caption_seeds(cfg.seed, "eval.corrupt");
  std::vector<MetricReport> out;
  try {
    for (const auto& e : grid.entries) {
      e.flags.apply(model);
      MetricReport rep;
      rep.name = e.name;
      rep.meta = {checkpoint_id, e.guidance, e.flags, e.corrupt_p, cfg.seed, sampling_steps};
      for (std::size_t i = 0; i < records.size(); ++i) {
        CaptionSet caps = records[i]->captions;
        if (e.flags.mixed) caps = mixed_captions(caps);
        if (e.corrupt_p > 0.0) caps = corrupt_captions(caps, e.corrupt_p, caption_seeds.bits(i));
        const Image sr = restore(model, plan, enc, lrs[i], caps, e.guidance, sample_seeds.bits(i));
        rep.images.push_back(evaluate_pair(records[i]->record_id, sr, hrs[i], perceptual));
      }
      rep.set_means();
      out.push_back(std::move(rep));
    }
  } catch (...) {
    model.set_branch_flags(original);
    throw;
  }
  model.set_branch_flags(original);
  return out;
}

/// Loads the checkpoint and manifest, evaluates the grid with the
/// checkpoint's noise schedule and persists the reports under `out_dir`.
inline std::vector<MetricReport> run_ablation(const AblationGrid& grid, const std::filesystem::path& manifest_path,
                                              const std::filesystem::path& checkpoint_path, const EvalConfig& cfg,
                                              int sampling_steps, const std::filesystem::path& out_dir) {
  grid.validate();
  if (!std::filesystem::exists(checkpoint_path))
    throw std::runtime_error("checkpoint not found: " + checkpoint_path.string());
  const Manifest manifest = Manifest::load(manifest_path);
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Denoiser model = model_from_checkpoint(ckpt);
  const auto& dc = model.config();
  if (!dc.enable_gtca || !dc.enable_lfca || !dc.enable_hfca || !dc.enable_lrca)
    throw ValidationError("ablation needs a checkpoint trained with every branch enabled");
  std::size_t lr_size = 0;
  if (!manifest.records.empty()) lr_size = read_ppm(manifest.resolve(manifest.records.front().lr_path)).width;
  const EncoderSuite suite(dc, lr_size ? lr_size : 16);
  const auto reports = grid.entries.empty()
                           ? std::vector<MetricReport>{}
                           : evaluate_grid(grid, model, manifest, ckpt.diffusion.schedule(), sampling_steps, suite.view(), cfg,
                                           file_id(checkpoint_path));
  write_reports(out_dir, grid.name, reports);
  if (grid.name == "robustness" && reports.size() == 2) {
    std::ofstream f(out_dir / "robustness_delta.json", std::ios::binary | std::ios::trunc);
    f << robustness_delta(reports[0], reports[1]).dump(2) << '\n';
  }
  return reports;
}

}  // namespace dtpsr
