#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "simformer/model.hpp"
#include "simformer/sampling.hpp"
#include "simformer/synthdata.hpp"

namespace simformer {

struct ClassTotals {
  std::int64_t intersection = 0;
  std::int64_t union_ = 0;
};

struct IoUReport {
  std::map<int, double> per_class_iou;  // classes with non-empty union only
  std::map<int, ClassTotals> totals;
  double mean_novel_iou = 0.0;  // NaN when no novel class is defined
  double mean_base_iou = 0.0;   // NaN when no base class is defined
};

void to_json(nlohmann::json& j, const IoUReport& r);

/// Whole-set intersection/union accumulation. Pixels whose ground truth is the
/// ignore ID are skipped. Accumulators merge associatively.
class IoUAccumulator {
 public:
  explicit IoUAccumulator(int num_classes);
  void add(const LabelMap& prediction, const LabelMap& gt);
  void merge(const IoUAccumulator& other);
  IoUReport report(const ClassSplit& split) const;

 private:
  int num_classes_;
  std::vector<std::int64_t> intersection_, predicted_, actual_;
};

IoUReport compute_miou(const std::vector<LabelMap>& predictions, const std::vector<LabelMap>& gts,
                       const ClassSplit& split);

/// Segments every sample and scores it against its full mask.
IoUReport evaluate_model(SimFormerModel& model, const std::vector<FullSample>& samples, const ClassSplit& split);

/// JSON report plus a CSV table (class_id,iou,group).
void write_iou_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                      const IoUReport& report, const ClassSplit& split);

/// Binary confusion counts with "similar" as the positive class.
struct PairConfusion {
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  void add(const torch::Tensor& scores, const torch::Tensor& labels, double threshold = 0.5);
  double f1_similar() const;
  double f1_dissimilar() const;
  std::int64_t similar_pairs() const { return tp + fn; }
  std::int64_t dissimilar_pairs() const { return fp + tn; }
};

struct PairF1Report {
  double base_dis = 0.0, base_sim = 0.0, novel_dis = 0.0, novel_sim = 0.0;
  PairConfusion base, novel;
  int image_pairs = 0;
};

void to_json(nlohmann::json& j, const PairF1Report& r);

/// Training images held in memory in both oracle and weak-shot form.
struct LoadedCorpus {
  DatasetManifest manifest;
  std::vector<FullSample> train_full;
  std::vector<WeakShotSample> train_weak;
  std::vector<FullSample> test;
  std::map<std::string, std::size_t> train_index;

  static LoadedCorpus load(const DatasetManifest& manifest);
};

/// Scores [J_in, J_ref] for sampled coordinates of training images
/// `input_idx` and `ref_idx`.
using PairScorer = std::function<torch::Tensor(const PairCoords&, std::size_t input_idx, std::size_t ref_idx)>;

/// Samples base and not-base pair batches over `num_image_pairs` training
/// image pairs and scores them; not-base pairs are labeled from the oracle
/// masks. Threshold 0.5.
PairF1Report eval_pair_f1(const LoadedCorpus& corpus, int num_image_pairs, int j, Rng& rng, const PairScorer& scorer);

/// eval_pair_f1 with the model's SimNet as scorer.
PairF1Report eval_simnet_f1(SimFormerModel& model, const LoadedCorpus& corpus, int num_image_pairs, int j, Rng& rng);

struct SignificanceResult {
  double p_value = 1.0;
  double t_statistic = 0.0;
  double dof = 0.0;
  double mean_a = 0.0, std_a = 0.0, mean_b = 0.0, std_b = 0.0;
  std::string summary_a, summary_b;  // "27.5±0.54"
};

void to_json(nlohmann::json& j, const SignificanceResult& r);

/// Two-sided Welch two-sample t-test. Sample standard deviations.
SignificanceResult significance_test(const std::vector<double>& runs_a, const std::vector<double>& runs_b);

std::string format_mean_std(double mean, double std);

}  // namespace simformer
