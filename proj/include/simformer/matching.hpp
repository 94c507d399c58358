#pragma once

#include <torch/torch.h>

#include <stdexcept>
#include <vector>

#include "simformer/losses.hpp"
#include "simformer/model.hpp"
#include "simformer/synthdata.hpp"

namespace simformer {

inline constexpr int kNoObject = -1;

/// One per image-level class. Base entries carry a binary [H, W] mask; novel
/// entries leave `mask` undefined.
struct TargetEntry {
  int class_id = 0;
  torch::Tensor mask;
  bool has_mask() const { return mask.defined(); }
};

struct TargetSet {
  std::vector<TargetEntry> entries;
  std::size_t size() const { return entries.size(); }
};

/// Builds the target set of a training image: every class in `labels` gets an
/// entry, base classes (per `split`) also get their binary GT mask from `mask`.
TargetSet make_targets(const LabelMap& mask, const std::set<int>& labels, const ClassSplit& split,
                       torch::TensorOptions opts = torch::kFloat32);

struct Assignment {
  std::vector<int> match;   // proposal -> target index or kNoObject
  std::vector<int> y_star;  // proposal -> class ID, ignore_id when unmatched
};

struct MatchCostWeights {
  double cls = 1.0;
  double focal = 20.0;
  double dice = 1.0;
};

/// Dense T×N cost matrix, row-major.
struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  CostMatrix() = default;
  CostMatrix(int r, int c, double fill = 0.0) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}
  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// cost[t,i] = -w_cls·Y[c_t,i] + [c_t base]·(w_focal·focal + w_dice·dice).
/// `outputs` is a single image (see ModelOutputs::image).
CostMatrix build_cost_matrix(const ModelOutputs& outputs, const TargetSet& targets, const ClassSplit& split,
                             const LossConfig& loss_cfg, const MatchCostWeights& weights = {});

/// Minimum-cost injective assignment of targets (rows) to proposals (columns).
/// Among optimal matchings the lexicographically smallest target→proposal
/// sequence is returned.
Assignment hungarian_assign(const CostMatrix& cost, const TargetSet& targets, int ignore_id = kIgnoreId);

/// Row → column map only; exposed for tests.
std::vector<int> solve_assignment(const CostMatrix& cost);

/// Σ_t cost[t, assignment[t]] in row order.
double assignment_cost(const CostMatrix& cost, const std::vector<int>& row_to_col);

}  // namespace simformer
