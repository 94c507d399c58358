#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "simformer/evaluation.hpp"
#include "simformer/losses.hpp"
#include "simformer/model.hpp"
#include "simformer/synthdata.hpp"

namespace simformer {

enum class TrainMode {
  kWeakShot,  // novel pixels ignored, image-level labels for novel classes
  kFull,      // every class supervised by masks; cls + mask losses only
};

struct TrainConfig {
  double lr0 = 1e-4;
  double weight_decay = 1e-4;
  int total_iters = 20000;
  int batch_size = 8;  // image pairs per step
  double poly_power = 0.9;
  bool flip = true;
  bool crop = true;
  int crop_size = 48;
  bool pixel_transfer = true;  // distillation loss
  bool comp_loss = true;       // complementary loss
  bool self_pair = false;      // reference image = input image
  int pairs_per_image = 100;   // J
  bool sim_grad_to_pixels = true;
  std::uint64_t seed = 1;
  int eval_interval = 1000;
  int log_interval = 50;
  bool use_double = false;  // 64-bit deterministic mode
  TrainMode mode = TrainMode::kWeakShot;
  LossConfig loss;
  ModelConfig model;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
/// Missing keys keep the value already in `c`.
void from_json(const nlohmann::json& j, TrainConfig& c);

/// lr0·(1 - t/T)^power, clamped to 0 past T.
double poly_lr(double lr0, long t, long total, double power);

/// Training-side view of a corpus.
struct TrainingData {
  DatasetManifest manifest;          // reference sampling and evaluation split
  std::vector<WeakShotSample> samples;
  std::map<std::string, std::size_t> index;
  std::vector<FullSample> test;
  ClassSplit train_split;            // split used by the losses
  bool targets_from_mask = false;    // full mode: targets are the mask's classes

  static TrainingData prepare(const DatasetManifest& manifest, TrainMode mode);
};

/// One step's outcome.
struct StepReport {
  long iteration = 0;  // iteration the step ran at
  double lr = 0.0;
  LossReport loss;
  std::vector<ReferenceFallback> fallback;  // per pair in the batch
  int skipped_base_pairs = 0;
  int skipped_novel_pairs = 0;
  /// Weakest reference level among pairs that produced a distillation term.
  std::optional<ReferenceFallback> dist_fallback;
};

void to_json(nlohmann::json& j, const StepReport& r);

class NonFiniteLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Owns the model, the optimizer and the random stream.
class Trainer {
 public:
  Trainer(TrainConfig config, const TrainingData& data);

  /// Draws a batch of (input, reference) sample indices.
  std::vector<std::pair<std::size_t, std::size_t>> sample_batch();
  /// One optimization step on an explicit batch at the current iteration.
  StepReport train_step(const std::vector<std::pair<std::size_t, std::size_t>>& batch);
  /// sample_batch + train_step.
  StepReport step();

  void save(const std::filesystem::path& path, const nlohmann::json& extra = nlohmann::json::object());
  /// Restores parameters, optimizer moments, iteration, random stream and
  /// running averages. Returns the checkpoint metadata.
  nlohmann::json load(const std::filesystem::path& path);

  SimFormerModel& model() { return model_; }
  long iteration() const { return iteration_; }
  const TrainConfig& config() const { return config_; }
  const std::map<std::string, double>& running() const { return running_; }
  void set_dump_dir(std::filesystem::path dir) { dump_dir_ = std::move(dir); }

 private:
  struct Augmented {
    torch::Tensor image;  // [3, h, w]
    LabelMap mask;
  };
  Augmented augment(const WeakShotSample& sample);
  void update_running(const LossReport& r);
  [[noreturn]] void dump_nonfinite(const std::vector<std::pair<std::size_t, std::size_t>>& batch,
                                   const LossReport& r);

  TrainConfig config_;
  const TrainingData* data_;
  SimFormerModel model_{nullptr};
  std::unique_ptr<torch::optim::AdamW> optimizer_;
  Rng rng_;
  long iteration_ = 0;
  std::map<std::string, double> running_;
  std::filesystem::path dump_dir_ = ".";
};

struct TrainResult {
  std::filesystem::path last_checkpoint;
  std::filesystem::path best_checkpoint;
  IoUReport final_report;  // last model on the test split
  double best_novel_iou = 0.0;
  long iterations = 0;
  double seconds = 0.0;  // training wall time, summed over resumes
};

/// Full loop: poly schedule, periodic test evaluation appended to
/// `out_dir/metrics.jsonl`, best-by-novel-mIoU and last checkpoints. Resumes
/// from `out_dir/last.ckpt` when present.
TrainResult run_training(const TrainConfig& config, const DatasetManifest& manifest,
                         const std::filesystem::path& out_dir);

/// Writes mixed-label masks (base GT + filtered teacher predictions) for every
/// training image into a new dataset under `out_dir`; test images are copied.
DatasetManifest write_mixed_label_dataset(SimFormerModel& teacher, const DatasetManifest& manifest,
                                          const std::filesystem::path& out_dir);

/// Mixed labels from the teacher, then a fresh fully supervised run on them.
TrainResult run_retraining(const TrainConfig& config, const DatasetManifest& manifest,
                           const std::filesystem::path& teacher_checkpoint, const std::filesystem::path& out_dir);

}  // namespace simformer
