#pragma once

#include <torch/torch.h>

#include <optional>

#include "json.hpp"

namespace simformer {

struct Assignment;
struct TargetSet;
struct ClassSplit;

struct LossConfig {
  double alpha = 0.1;   // distillation weight
  double beta = 0.2;    // complementary weight
  double gamma = 0.1;   // constant mask value of no-object proposals in the complementary union
  double w_focal = 20.0;
  double w_dice = 1.0;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double eps = 1e-6;
  double dice_smooth = 1.0;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

/// Scalar loss values of one step. `dist` / `comp` are empty when skipped.
struct LossReport {
  double cls = 0.0;
  double mask = 0.0;
  double sim = 0.0;
  std::optional<double> dist;
  std::optional<double> comp;
  double full = 0.0;
  int cls_terms = 0;
  int mask_terms = 0;
  int sim_terms = 0;
  int dist_terms = 0;
  int comp_terms = 0;
};

void to_json(nlohmann::json& j, const LossReport& r);

/// Differentiable parts handed to loss_full.
struct LossParts {
  torch::Tensor cls;
  torch::Tensor mask;
  torch::Tensor sim;
  std::optional<torch::Tensor> dist;
  std::optional<torch::Tensor> comp;
};

struct FullLoss {
  torch::Tensor total;
  LossReport report;
};

/// Mean-over-pixels focal term on probabilities (clamped to [eps, 1-eps]).
torch::Tensor focal_term(const torch::Tensor& pred, const torch::Tensor& gt, const LossConfig& cfg);
/// 1 - (2Σpg + s) / (Σp + Σg + s).
torch::Tensor dice_term(const torch::Tensor& pred, const torch::Tensor& gt, const LossConfig& cfg);

/// Pairwise unweighted focal / dice terms between every GT mask and every
/// predicted mask: pred [N, P], gt [T, P] -> two [T, N] tensors.
std::pair<torch::Tensor, torch::Tensor> pairwise_focal_dice(const torch::Tensor& pred, const torch::Tensor& gt,
                                                            const LossConfig& cfg);

/// w_focal·focal + w_dice·dice. gt must be binary.
torch::Tensor loss_focal_dice(const torch::Tensor& pred, const torch::Tensor& gt, const LossConfig& cfg);

/// Σ_i -log(clamp(Y[y*(i), i], eps, 1)); no-object proposals read the last row.
torch::Tensor loss_cls(const torch::Tensor& class_probs, const Assignment& assignment, const LossConfig& cfg);

/// Σ over base-matched proposals of loss_focal_dice(M[i], GT mask).
torch::Tensor loss_mask(const torch::Tensor& mask_probs, const Assignment& assignment, const TargetSet& targets,
                        const ClassSplit& split, const LossConfig& cfg, int* terms = nullptr);

/// Mean binary cross-entropy of base pair scores against same-class labels.
torch::Tensor loss_sim(const torch::Tensor& scores, const torch::Tensor& labels, const LossConfig& cfg);

/// Mean over J×J pairs of BCE(clamp(ReLU(cos(S_in[:,a], S_ref[:,b]))), R_n[a,b]).
/// R_n is detached internally and never receives gradient.
torch::Tensor loss_dist(const torch::Tensor& s_input, const torch::Tensor& s_ref, const torch::Tensor& r_novel,
                        const LossConfig& cfg);

/// Enumerated cosine similarities [J_in, J_ref] between score columns; a zero
/// column has cosine 0 with everything.
torch::Tensor cosine_enum(const torch::Tensor& s_input, const torch::Tensor& s_ref);

/// Complementary loss: union (pixelwise max) of novel masks and constant-γ
/// grids for no-object proposals, supervised by 1 - union of base GT masks.
/// Empty when the image has no base GT mask or no novel / no-object proposal.
std::optional<torch::Tensor> loss_comp(const torch::Tensor& mask_probs, const Assignment& assignment,
                                       const TargetSet& targets, const ClassSplit& split, const LossConfig& cfg);

/// full = cls + mask + sim + α·dist + β·comp with absent parts as 0.
FullLoss loss_full(const LossParts& parts, const LossConfig& cfg);

}  // namespace simformer
