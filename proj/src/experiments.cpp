#include "simformer/experiments.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "simformer/checkpoint.hpp"

namespace simformer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::pair<double, double> mean_std(const std::vector<double>& x) {
  if (x.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  if (x.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(x.size() - 1))};
}

double points(double iou) { return std::isfinite(iou) ? 100.0 * iou : 0.0; }

// Reads the final test report of a finished run without retraining.
bool finished_result(const fs::path& dir, int total_iters, double& novel, double& base, double& seconds) {
  const fs::path last = dir / "last.ckpt";
  if (!fs::exists(last)) return false;
  const auto meta = read_checkpoint(last).metadata;
  if (meta.value("iteration", 0L) < total_iters || !meta.contains("last_report")) return false;
  novel = meta["last_report"].value("novel", 0.0);
  base = meta["last_report"].value("base", 0.0);
  seconds = meta.value("train_seconds", 0.0);
  return true;
}

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

// Cached runs are reused only for the same config on the same corpus; a stale
// directory is cleared so training restarts from scratch.
void claim_run_dir(const fs::path& dir, const TrainConfig& cfg, const DatasetManifest& manifest,
                   const json& extra = nullptr) {
  const json stamp{{"config", cfg},
                   {"corpus_seed", manifest.effective_seed},
                   {"train", manifest.train_ids.size()},
                   {"test", manifest.test_ids.size()},
                   {"extra", extra}};
  const fs::path file = dir / "run_stamp.json";
  if (fs::exists(dir)) {
    std::ifstream in(file);
    json old;
    try {
      if (in) old = json::parse(in);
    } catch (const json::exception&) {
    }
    if (old != stamp) fs::remove_all(dir);
  }
  fs::create_directories(dir);
  std::ofstream(file) << stamp.dump(2) << '\n';
}

}  // namespace

void SeedRuns::summarize() {
  std::tie(novel_mean, novel_std) = mean_std(novel);
  std::tie(base_mean, base_std) = mean_std(base);
}

void to_json(json& j, const SeedRuns& r) {
  j = json{{"label", r.label},         {"seeds", r.seeds},         {"novel_miou", r.novel},
           {"base_miou", r.base},      {"novel_mean", r.novel_mean}, {"novel_std", r.novel_std},
           {"base_mean", r.base_mean}, {"base_std", r.base_std}, {"seconds", r.seconds}};
}

void from_json(const json& j, SeedRuns& r) {
  r.label = j.value("label", "");
  r.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  r.novel = j.value("novel_miou", std::vector<double>{});
  r.base = j.value("base_miou", std::vector<double>{});
  r.seconds = j.value("seconds", std::vector<double>{});
  r.summarize();
}

SeedRuns run_seeds(const std::string& label, const TrainConfig& config, const DatasetManifest& manifest,
                   const std::vector<std::uint64_t>& seeds, const fs::path& out_dir) {
  SeedRuns runs;
  runs.label = label;
  for (auto seed : seeds) {
    TrainConfig cfg = config;
    cfg.seed = seed;
    const fs::path dir = out_dir / seed_dir(seed);
    claim_run_dir(dir, cfg, manifest);
    double novel = 0.0, base = 0.0, seconds = 0.0;
    if (!finished_result(dir, cfg.total_iters, novel, base, seconds)) {
      const auto result = run_training(cfg, manifest, dir);
      novel = result.final_report.mean_novel_iou;
      base = result.final_report.mean_base_iou;
      seconds = result.seconds;
    }
    runs.seeds.push_back(seed);
    runs.seconds.push_back(seconds);
    runs.novel.push_back(points(novel));
    runs.base.push_back(points(base));
  }
  runs.summarize();
  return runs;
}

SeedRuns run_retrain_seeds(const std::string& label, const TrainConfig& config, const DatasetManifest& manifest,
                           const std::vector<std::uint64_t>& seeds, const fs::path& teacher_root,
                           const fs::path& out_dir) {
  SeedRuns runs;
  runs.label = label;
  for (auto seed : seeds) {
    TrainConfig cfg = config;
    cfg.seed = seed;
    const fs::path dir = out_dir / seed_dir(seed);
    json teacher_stamp;
    if (std::ifstream in(teacher_root / seed_dir(seed) / "run_stamp.json"); in) teacher_stamp = json::parse(in);
    claim_run_dir(dir, cfg, manifest, {{"teacher", teacher_stamp}});
    double novel = 0.0, base = 0.0, seconds = 0.0;
    if (!finished_result(dir / "student", cfg.total_iters, novel, base, seconds)) {
      const auto result = run_retraining(cfg, manifest, teacher_root / seed_dir(seed) / "last.ckpt", dir);
      novel = result.final_report.mean_novel_iou;
      base = result.final_report.mean_base_iou;
      seconds = result.seconds;
    }
    runs.seeds.push_back(seed);
    runs.seconds.push_back(seconds);
    runs.novel.push_back(points(novel));
    runs.base.push_back(points(base));
  }
  runs.summarize();
  return runs;
}

TrainConfig ablation_config(const TrainConfig& config, const std::string& label) {
  TrainConfig cfg = config;
  cfg.mode = TrainMode::kWeakShot;
  if (label == "Pr") {
    cfg.pixel_transfer = false;
    cfg.comp_loss = false;
  } else if (label == "Pr+Pi") {
    cfg.pixel_transfer = true;
    cfg.comp_loss = false;
  } else if (label == "Pr+Co") {
    cfg.pixel_transfer = false;
    cfg.comp_loss = true;
  } else if (label == "Pr+Pi+Co") {
    cfg.pixel_transfer = true;
    cfg.comp_loss = true;
  } else {
    throw std::invalid_argument("unknown ablation variant '" + label + "'");
  }
  return cfg;
}

std::vector<SeedRuns> run_ablation(const TrainConfig& config, const DatasetManifest& manifest,
                                   const std::vector<std::uint64_t>& seeds, const fs::path& out_dir) {
  std::vector<SeedRuns> rows;
  for (const auto& label : ablation_labels()) {
    rows.push_back(run_seeds(label, ablation_config(config, label), manifest, seeds, out_dir / label));
  }
  write_runs_table(out_dir / "ablation", rows);
  return rows;
}

std::vector<double> sweep_grid(const std::string& param) {
  if (param == "alpha") return {0.0, 0.05, 0.1, 0.2, 0.4};
  if (param == "beta") return {0.0, 0.1, 0.2, 0.4};
  if (param == "gamma") return {0.01, 0.1, 0.3, 0.5, 0.9};
  throw std::invalid_argument("unknown sweep parameter '" + param + "' (expected alpha, beta or gamma)");
}

std::vector<SeedRuns> run_sweep(const TrainConfig& config, const DatasetManifest& manifest,
                                const std::vector<std::uint64_t>& seeds, const std::string& param,
                                const std::vector<double>& values, const fs::path& out_dir) {
  sweep_grid(param);  // validates the name
  std::vector<SeedRuns> rows;
  for (double v : values) {
    TrainConfig cfg = config;
    if (param == "alpha") cfg.loss.alpha = v;
    if (param == "beta") cfg.loss.beta = v;
    if (param == "gamma") cfg.loss.gamma = v;
    std::ostringstream label;
    label << param << '=' << v;
    rows.push_back(run_seeds(label.str(), cfg, manifest, seeds, out_dir / label.str()));
  }
  write_runs_table(out_dir / ("sweep_" + param), rows);
  return rows;
}

void write_runs_table(const fs::path& stem, const std::vector<SeedRuns>& rows) {
  fs::create_directories(stem.parent_path());
  {
    std::ofstream out(stem.string() + ".json");
    if (!out) throw std::runtime_error("io_error: cannot write " + stem.string() + ".json");
    out << json(rows).dump(2) << '\n';
  }
  std::ofstream csv(stem.string() + ".csv");
  if (!csv) throw std::runtime_error("io_error: cannot write " + stem.string() + ".csv");
  csv << "label,seed,novel_miou,base_miou\n";
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      csv << r.label << ',' << r.seeds[i] << ',' << r.novel[i] << ',' << r.base[i] << '\n';
    }
    csv << r.label << ",mean," << r.novel_mean << ',' << r.base_mean << '\n';
  }
}

std::string format_runs_table(const std::vector<SeedRuns>& rows) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %-16s %-16s\n", "variant", "novel mIoU", "base mIoU");
  out << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-14s %-16s %-16s\n", r.label.c_str(),
                  format_mean_std(r.novel_mean, r.novel_std).c_str(), format_mean_std(r.base_mean, r.base_std).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace simformer
