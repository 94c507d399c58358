#include "simformer/losses.hpp"

#include <stdexcept>

#include "simformer/matching.hpp"

namespace simformer {

using nlohmann::json;

void LossConfig::validate() const {
  if (alpha < 0 || beta < 0) throw std::invalid_argument("loss config: alpha and beta must be non-negative");
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("loss config: gamma must lie in (0,1)");
  if (!(eps > 0 && eps < 0.5)) throw std::invalid_argument("loss config: eps must lie in (0,0.5)");
}

void to_json(json& j, const LossConfig& c) {
  j = json{{"alpha", c.alpha},       {"beta", c.beta},           {"gamma", c.gamma},
           {"w_focal", c.w_focal},   {"w_dice", c.w_dice},       {"focal_gamma", c.focal_gamma},
           {"focal_alpha", c.focal_alpha}, {"eps", c.eps},       {"dice_smooth", c.dice_smooth}};
}

void from_json(const json& j, LossConfig& c) {
  LossConfig d;
  c.alpha = j.value("alpha", d.alpha);
  c.beta = j.value("beta", d.beta);
  c.gamma = j.value("gamma", d.gamma);
  c.w_focal = j.value("w_focal", d.w_focal);
  c.w_dice = j.value("w_dice", d.w_dice);
  c.focal_gamma = j.value("focal_gamma", d.focal_gamma);
  c.focal_alpha = j.value("focal_alpha", d.focal_alpha);
  c.eps = j.value("eps", d.eps);
  c.dice_smooth = j.value("dice_smooth", d.dice_smooth);
}

void to_json(json& j, const LossReport& r) {
  j = json{{"cls", r.cls},
           {"mask", r.mask},
           {"sim", r.sim},
           {"dist", r.dist ? json(*r.dist) : json(nullptr)},
           {"comp", r.comp ? json(*r.comp) : json(nullptr)},
           {"full", r.full},
           {"counts",
            {{"cls", r.cls_terms}, {"mask", r.mask_terms}, {"sim", r.sim_terms}, {"dist", r.dist_terms},
             {"comp", r.comp_terms}}}};
}

torch::Tensor focal_term(const torch::Tensor& pred, const torch::Tensor& gt, const LossConfig& cfg) {
  auto p = pred.clamp(cfg.eps, 1.0 - cfg.eps);
  auto ce = -(gt * torch::log(p) + (1 - gt) * torch::log(1 - p));
  auto p_t = p * gt + (1 - p) * (1 - gt);
  auto alpha_t = cfg.focal_alpha * gt + (1 - cfg.focal_alpha) * (1 - gt);
  return (alpha_t * torch::pow(1 - p_t, cfg.focal_gamma) * ce).mean();
}

torch::Tensor dice_term(const torch::Tensor& pred, const torch::Tensor& gt, const LossConfig& cfg) {
  auto inter = (pred * gt).sum();
  return 1 - (2 * inter + cfg.dice_smooth) / (pred.sum() + gt.sum() + cfg.dice_smooth);
}

std::pair<torch::Tensor, torch::Tensor> pairwise_focal_dice(const torch::Tensor& pred, const torch::Tensor& gt,
                                                            const LossConfig& cfg) {
  const double pixels = static_cast<double>(pred.size(1));
  auto p = pred.clamp(cfg.eps, 1.0 - cfg.eps);
  auto pos = cfg.focal_alpha * torch::pow(1 - p, cfg.focal_gamma) * -torch::log(p);
  auto neg = (1 - cfg.focal_alpha) * torch::pow(p, cfg.focal_gamma) * -torch::log(1 - p);
  auto focal = (torch::matmul(gt, pos.t()) + torch::matmul(1 - gt, neg.t())) / pixels;
  auto inter = torch::matmul(gt, pred.t());
  auto denom = pred.sum(1).unsqueeze(0) + gt.sum(1).unsqueeze(1) + cfg.dice_smooth;
  auto dice = 1 - (2 * inter + cfg.dice_smooth) / denom;
  return {focal, dice};
}

torch::Tensor loss_focal_dice(const torch::Tensor& pred, const torch::Tensor& gt, const LossConfig& cfg) {
  if (pred.sizes() != gt.sizes()) throw std::invalid_argument("loss_focal_dice: shape mismatch");
  if (!torch::logical_or(gt == 0, gt == 1).all().item<bool>()) {
    throw std::invalid_argument("loss_focal_dice: ground truth must be binary");
  }
  return cfg.w_focal * focal_term(pred, gt, cfg) + cfg.w_dice * dice_term(pred, gt, cfg);
}

torch::Tensor loss_cls(const torch::Tensor& class_probs, const Assignment& assignment, const LossConfig& cfg) {
  const int64_t rows = class_probs.size(0);
  const int64_t n = class_probs.size(1);
  if (static_cast<int64_t>(assignment.y_star.size()) != n) {
    throw std::invalid_argument("loss_cls: assignment size does not match proposals");
  }
  std::vector<int64_t> idx(n);
  for (int64_t i = 0; i < n; ++i) {
    const int c = assignment.y_star[i];
    idx[i] = assignment.match[i] == kNoObject ? rows - 1 : c;
    if (idx[i] < 0 || idx[i] >= rows) throw std::invalid_argument("loss_cls: class id out of range");
  }
  auto index = torch::tensor(idx, torch::kInt64).unsqueeze(0);
  auto picked = class_probs.gather(0, index).squeeze(0);
  return -torch::log(picked.clamp(cfg.eps, 1.0)).sum();
}

torch::Tensor loss_mask(const torch::Tensor& mask_probs, const Assignment& assignment, const TargetSet& targets,
                        const ClassSplit& split, const LossConfig& cfg, int* terms) {
  auto total = torch::zeros({}, mask_probs.options());
  int count = 0;
  for (std::size_t i = 0; i < assignment.match.size(); ++i) {
    const int t = assignment.match[i];
    if (t == kNoObject) continue;
    const auto& entry = targets.entries.at(t);
    if (!split.is_base(entry.class_id)) continue;
    if (!entry.has_mask()) throw std::invalid_argument("loss_mask: base target without GT mask");
    total = total + loss_focal_dice(mask_probs[static_cast<int64_t>(i)], entry.mask, cfg);
    ++count;
  }
  if (terms) *terms = count;
  return total;
}

namespace {

torch::Tensor bce(const torch::Tensor& pred, const torch::Tensor& target, const LossConfig& cfg) {
  auto p = pred.clamp(cfg.eps, 1.0 - cfg.eps);
  return -(target * torch::log(p) + (1 - target) * torch::log(1 - p));
}

}  // namespace

torch::Tensor loss_sim(const torch::Tensor& scores, const torch::Tensor& labels, const LossConfig& cfg) {
  if (scores.sizes() != labels.sizes()) throw std::invalid_argument("loss_sim: shape mismatch");
  return bce(scores, labels.to(scores.dtype()), cfg).mean();
}

torch::Tensor cosine_enum(const torch::Tensor& s_input, const torch::Tensor& s_ref) {
  auto dot = torch::matmul(s_input.t(), s_ref);  // [J_in, J_ref]
  auto sq_in = (s_input * s_input).sum(0);
  auto sq_ref = (s_ref * s_ref).sum(0);
  auto valid = torch::logical_and(sq_in.unsqueeze(1) > 0, sq_ref.unsqueeze(0) > 0);
  // Substitute 1 for zero norms so neither value nor gradient becomes NaN.
  auto n_in = torch::sqrt(torch::where(sq_in > 0, sq_in, torch::ones_like(sq_in)));
  auto n_ref = torch::sqrt(torch::where(sq_ref > 0, sq_ref, torch::ones_like(sq_ref)));
  auto cos = dot / (n_in.unsqueeze(1) * n_ref.unsqueeze(0));
  return torch::where(valid, cos, torch::zeros_like(cos));
}

torch::Tensor loss_dist(const torch::Tensor& s_input, const torch::Tensor& s_ref, const torch::Tensor& r_novel,
                        const LossConfig& cfg) {
  if (s_input.dim() != 2 || s_ref.dim() != 2 || s_input.size(0) != s_ref.size(0)) {
    throw std::invalid_argument("loss_dist: score matrices must be [|Cn|, J] with equal class dimension");
  }
  if (r_novel.dim() != 2 || r_novel.size(0) != s_input.size(1) || r_novel.size(1) != s_ref.size(1)) {
    throw std::invalid_argument("loss_dist: similarity source must be [J_in, J_ref]");
  }
  auto source = r_novel.detach().to(s_input.dtype());
  auto target = torch::relu(cosine_enum(s_input, s_ref));
  return bce(target, source, cfg).mean();
}

std::optional<torch::Tensor> loss_comp(const torch::Tensor& mask_probs, const Assignment& assignment,
                                       const TargetSet& targets, const ClassSplit& split, const LossConfig& cfg) {
  std::vector<torch::Tensor> base_masks;
  for (const auto& e : targets.entries) {
    if (split.is_base(e.class_id) && e.has_mask()) base_masks.push_back(e.mask);
  }
  if (base_masks.empty()) return std::nullopt;

  std::vector<torch::Tensor> preds;
  torch::Tensor gamma_grid;
  for (std::size_t i = 0; i < assignment.match.size(); ++i) {
    const int t = assignment.match[i];
    if (t == kNoObject) {
      if (!gamma_grid.defined()) gamma_grid = torch::full_like(mask_probs[0], cfg.gamma);
      preds.push_back(gamma_grid);
    } else if (split.is_novel(targets.entries.at(t).class_id)) {
      preds.push_back(mask_probs[static_cast<int64_t>(i)]);
    }
  }
  if (preds.empty()) return std::nullopt;

  auto target = 1 - std::get<0>(torch::stack(base_masks).max(0));
  auto pred = std::get<0>(torch::stack(preds).max(0));
  return cfg.w_focal * focal_term(pred, target, cfg) + cfg.w_dice * dice_term(pred, target, cfg);
}

FullLoss loss_full(const LossParts& parts, const LossConfig& cfg) {
  FullLoss out;
  out.total = parts.cls + parts.mask + parts.sim;
  out.report.cls = parts.cls.item<double>();
  out.report.mask = parts.mask.item<double>();
  out.report.sim = parts.sim.item<double>();
  if (parts.dist) {
    out.total = out.total + cfg.alpha * *parts.dist;
    out.report.dist = parts.dist->item<double>();
  }
  if (parts.comp) {
    out.total = out.total + cfg.beta * *parts.comp;
    out.report.comp = parts.comp->item<double>();
  }
  out.report.full = out.total.item<double>();
  return out;
}

}  // namespace simformer
