#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "simformer/training.hpp"

namespace simformer {

/// Test-set results of one configuration over several seeds, in mIoU points
/// (percent).
struct SeedRuns {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<double> novel;
  std::vector<double> base;
  std::vector<double> seconds;  // training wall time per seed
  double novel_mean = 0.0, novel_std = 0.0;
  double base_mean = 0.0, base_std = 0.0;

  void summarize();
};

void to_json(nlohmann::json& j, const SeedRuns& r);
void from_json(const nlohmann::json& j, SeedRuns& r);

/// Trains `config` once per seed under `out_dir/seed<k>`. Finished runs are
/// picked up from their checkpoints instead of retrained.
SeedRuns run_seeds(const std::string& label, const TrainConfig& config, const DatasetManifest& manifest,
                   const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir);

/// Re-trains a student per seed from `teacher_root/seed<k>/last.ckpt`.
SeedRuns run_retrain_seeds(const std::string& label, const TrainConfig& config, const DatasetManifest& manifest,
                           const std::vector<std::uint64_t>& seeds, const std::filesystem::path& teacher_root,
                           const std::filesystem::path& out_dir);

/// Variant labels of the module-toggle grid, in table order.
inline const std::vector<std::string>& ablation_labels() {
  static const std::vector<std::string> labels{"Pr", "Pr+Pi", "Pr+Co", "Pr+Pi+Co"};
  return labels;
}

/// `config` with the toggles of an ablation label applied.
TrainConfig ablation_config(const TrainConfig& config, const std::string& label);

/// The four toggle combinations, each over all seeds. Writes
/// `out_dir/ablation.{json,csv}`.
std::vector<SeedRuns> run_ablation(const TrainConfig& config, const DatasetManifest& manifest,
                                   const std::vector<std::uint64_t>& seeds, const std::filesystem::path& out_dir);

/// Default grid of a loss weight ("alpha", "beta" or "gamma").
std::vector<double> sweep_grid(const std::string& param);

/// One row per value of `param`. Writes `out_dir/sweep_<param>.{json,csv}`.
std::vector<SeedRuns> run_sweep(const TrainConfig& config, const DatasetManifest& manifest,
                                const std::vector<std::uint64_t>& seeds, const std::string& param,
                                const std::vector<double>& values, const std::filesystem::path& out_dir);

/// JSON array plus CSV (label,seed,novel_miou,base_miou rows and a mean row per label).
void write_runs_table(const std::filesystem::path& stem, const std::vector<SeedRuns>& rows);

/// Fixed-width text table with mean±std columns.
std::string format_runs_table(const std::vector<SeedRuns>& rows);

}  // namespace simformer
