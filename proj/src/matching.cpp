#include "simformer/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace simformer {

TargetSet make_targets(const LabelMap& mask, const std::set<int>& labels, const ClassSplit& split,
                       torch::TensorOptions opts) {
  TargetSet targets;
  auto ids = torch::from_blob(const_cast<std::uint8_t*>(mask.data.data()), {mask.height, mask.width}, torch::kUInt8)
                 .to(torch::kInt64);
  for (int c : labels) {
    TargetEntry e;
    e.class_id = c;
    if (split.is_base(c)) e.mask = (ids == c).to(opts.dtype());
    targets.entries.push_back(std::move(e));
  }
  return targets;
}

CostMatrix build_cost_matrix(const ModelOutputs& outputs, const TargetSet& targets, const ClassSplit& split,
                             const LossConfig& loss_cfg, const MatchCostWeights& weights) {
  torch::NoGradGuard no_grad;
  const auto& y = outputs.class_probs;  // [K+1, N]
  const auto& m = outputs.mask_probs;   // [N, H, W]
  const int n = static_cast<int>(y.size(1));
  const int t_count = static_cast<int>(targets.size());
  if (t_count > n) {
    throw CapacityError("matching: " + std::to_string(t_count) + " targets exceed " + std::to_string(n) +
                        " proposals");
  }
  CostMatrix cost(t_count, n);
  auto y_cpu = y.to(torch::kFloat64).contiguous();
  auto ya = y_cpu.accessor<double, 2>();

  std::vector<int> base_rows;
  std::vector<torch::Tensor> base_masks;
  for (int t = 0; t < t_count; ++t) {
    const auto& e = targets.entries[t];
    for (int i = 0; i < n; ++i) cost.at(t, i) = -weights.cls * ya[e.class_id][i];
    if (split.is_base(e.class_id)) {
      if (!e.has_mask()) throw std::invalid_argument("matching: base target without GT mask");
      base_rows.push_back(t);
      base_masks.push_back(e.mask.reshape({-1}));
    }
  }
  if (!base_rows.empty()) {
    auto pred = m.reshape({n, -1}).to(torch::kFloat64);
    auto gt = torch::stack(base_masks).to(torch::kFloat64);
    auto [focal, dice] = pairwise_focal_dice(pred, gt, loss_cfg);
    auto mask_cost = (weights.focal * focal + weights.dice * dice).contiguous();
    auto mc = mask_cost.accessor<double, 2>();
    for (std::size_t r = 0; r < base_rows.size(); ++r)
      for (int i = 0; i < n; ++i) cost.at(base_rows[r], i) += mc[r][i];
  }
  return cost;
}

namespace {

// Shortest augmenting path Hungarian method for rows <= cols. Returns the
// column of each row.
std::vector<int> hungarian(const CostMatrix& a, const std::vector<int>& rows, const std::vector<int>& cols) {
  const int n = static_cast<int>(rows.size());
  const int m = static_cast<int>(cols.size());
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a.at(rows[i0 - 1], cols[j - 1]) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0) out[p[j] - 1] = cols[j - 1];
  return out;
}

double partial_cost(const CostMatrix& a, const std::vector<int>& rows, const std::vector<int>& assigned) {
  double s = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) s += a.at(rows[r], assigned[r]);
  return s;
}

}  // namespace

double assignment_cost(const CostMatrix& cost, const std::vector<int>& row_to_col) {
  double s = 0.0;
  for (int t = 0; t < cost.rows; ++t) s += cost.at(t, row_to_col[t]);
  return s;
}

std::vector<int> solve_assignment(const CostMatrix& cost) {
  if (cost.rows > cost.cols) throw CapacityError("matching: more targets than proposals");
  double scale = 0.0;
  for (double x : cost.data) {
    if (!std::isfinite(x)) throw std::invalid_argument("matching: non-finite cost entry");
    scale = std::max(scale, std::fabs(x));
  }
  if (cost.rows == 0) return {};

  std::vector<int> all_rows(cost.rows), all_cols(cost.cols);
  for (int t = 0; t < cost.rows; ++t) all_rows[t] = t;
  for (int i = 0; i < cost.cols; ++i) all_cols[i] = i;
  const std::vector<int> optimum = hungarian(cost, all_rows, all_cols);
  const double best = partial_cost(cost, all_rows, optimum);
  const double tol = 1e-12 * std::max(1.0, scale) * cost.rows;

  // Fix rows in order to the smallest column that still admits an optimal
  // completion; this selects the lexicographically smallest optimum.
  std::vector<int> result(cost.rows, -1);
  std::vector<char> taken(cost.cols, 0);
  double fixed = 0.0;
  for (int t = 0; t < cost.rows; ++t) {
    std::vector<int> rest_rows;
    for (int r = t + 1; r < cost.rows; ++r) rest_rows.push_back(r);
    bool placed = false;
    for (int c = 0; c < cost.cols && !placed; ++c) {
      if (taken[c]) continue;
      std::vector<int> rest_cols;
      for (int k = 0; k < cost.cols; ++k)
        if (!taken[k] && k != c) rest_cols.push_back(k);
      double total = fixed + cost.at(t, c);
      if (!rest_rows.empty()) total += partial_cost(cost, rest_rows, hungarian(cost, rest_rows, rest_cols));
      if (total <= best + tol) {
        result[t] = c;
        taken[c] = 1;
        fixed += cost.at(t, c);
        placed = true;
      }
    }
    if (!placed) return optimum;  // numerical corner case; the plain optimum is still optimal
  }
  return result;
}

Assignment hungarian_assign(const CostMatrix& cost, const TargetSet& targets, int ignore_id) {
  if (static_cast<int>(targets.size()) != cost.rows) {
    throw std::invalid_argument("hungarian_assign: target count does not match cost rows");
  }
  const auto row_to_col = solve_assignment(cost);
  Assignment out;
  out.match.assign(cost.cols, kNoObject);
  out.y_star.assign(cost.cols, ignore_id);
  for (int t = 0; t < cost.rows; ++t) {
    out.match[row_to_col[t]] = t;
    out.y_star[row_to_col[t]] = targets.entries[t].class_id;
  }
  return out;
}

}  // namespace simformer
