#include "simformer/evaluation.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "simformer/inference.hpp"

namespace simformer {

using nlohmann::json;

IoUAccumulator::IoUAccumulator(int num_classes)
    : num_classes_(num_classes),
      intersection_(num_classes, 0),
      predicted_(num_classes, 0),
      actual_(num_classes, 0) {}

void IoUAccumulator::add(const LabelMap& prediction, const LabelMap& gt) {
  if (!prediction.same_shape(gt)) throw std::invalid_argument("compute_miou: prediction/GT shape mismatch");
  for (std::size_t i = 0; i < gt.data.size(); ++i) {
    const int g = gt.data[i];
    if (g == kIgnoreId) continue;
    const int p = prediction.data[i];
    if (g < num_classes_) ++actual_[g];
    if (p < num_classes_) ++predicted_[p];
    if (p == g && g < num_classes_) ++intersection_[g];
  }
}

void IoUAccumulator::merge(const IoUAccumulator& other) {
  for (int c = 0; c < num_classes_; ++c) {
    intersection_[c] += other.intersection_[c];
    predicted_[c] += other.predicted_[c];
    actual_[c] += other.actual_[c];
  }
}

IoUReport IoUAccumulator::report(const ClassSplit& split) const {
  IoUReport r;
  double base_sum = 0.0, novel_sum = 0.0;
  int base_n = 0, novel_n = 0;
  for (int c = 0; c < num_classes_; ++c) {
    const std::int64_t uni = predicted_[c] + actual_[c] - intersection_[c];
    r.totals[c] = {intersection_[c], uni};
    if (uni == 0) continue;
    const double iou = static_cast<double>(intersection_[c]) / static_cast<double>(uni);
    r.per_class_iou[c] = iou;
    if (split.is_base(c)) {
      base_sum += iou;
      ++base_n;
    } else if (split.is_novel(c)) {
      novel_sum += iou;
      ++novel_n;
    }
  }
  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  r.mean_base_iou = base_n ? base_sum / base_n : kNaN;
  r.mean_novel_iou = novel_n ? novel_sum / novel_n : kNaN;
  return r;
}

IoUReport compute_miou(const std::vector<LabelMap>& predictions, const std::vector<LabelMap>& gts,
                       const ClassSplit& split) {
  if (predictions.size() != gts.size()) throw std::invalid_argument("compute_miou: list length mismatch");
  int k = split.num_semantic();
  for (int c : split.base_ids) k = std::max(k, c + 1);
  for (int c : split.novel_ids) k = std::max(k, c + 1);
  IoUAccumulator acc(k);
  for (std::size_t i = 0; i < gts.size(); ++i) acc.add(predictions[i], gts[i]);
  return acc.report(split);
}

IoUReport evaluate_model(SimFormerModel& model, const std::vector<FullSample>& samples, const ClassSplit& split) {
  std::vector<const Image*> images;
  for (const auto& s : samples) images.push_back(&s.image);
  const auto results = segment_images(model, images);
  IoUAccumulator acc(model->config().num_classes);
  for (std::size_t i = 0; i < samples.size(); ++i) acc.add(results[i].labels, samples[i].mask);
  return acc.report(split);
}

namespace {
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
}  // namespace

void to_json(json& j, const IoUReport& r) {
  json per = json::object(), totals = json::object();
  for (const auto& [c, v] : r.per_class_iou) per[std::to_string(c)] = v;
  for (const auto& [c, t] : r.totals) totals[std::to_string(c)] = {{"intersection", t.intersection}, {"union", t.union_}};
  j = json{{"per_class_iou", per},
           {"mean_novel_iou", number_or_null(r.mean_novel_iou)},
           {"mean_base_iou", number_or_null(r.mean_base_iou)},
           {"totals", totals}};
}

void write_iou_report(const std::filesystem::path& json_path, const std::filesystem::path& csv_path,
                      const IoUReport& report, const ClassSplit& split) {
  {
    std::ofstream out(json_path);
    if (!out) throw std::runtime_error("io_error: cannot write " + json_path.string());
    out << json(report).dump(2) << '\n';
  }
  std::ofstream csv(csv_path);
  if (!csv) throw std::runtime_error("io_error: cannot write " + csv_path.string());
  csv << "class_id,iou,group\n";
  for (const auto& [c, iou] : report.per_class_iou) {
    csv << c << ',' << iou << ',' << (split.is_base(c) ? "base" : split.is_novel(c) ? "novel" : "other") << '\n';
  }
}

void PairConfusion::add(const torch::Tensor& scores, const torch::Tensor& labels, double threshold) {
  auto pred = (scores.detach() >= threshold).to(torch::kBool);
  auto lab = (labels.detach() > 0.5).to(torch::kBool);
  tp += torch::logical_and(pred, lab).sum().item<std::int64_t>();
  fp += torch::logical_and(pred, lab.logical_not()).sum().item<std::int64_t>();
  fn += torch::logical_and(pred.logical_not(), lab).sum().item<std::int64_t>();
  tn += torch::logical_and(pred.logical_not(), lab.logical_not()).sum().item<std::int64_t>();
}

namespace {
// 0 when the class is neither present nor predicted.
double f1(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  const std::int64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}
}  // namespace

double PairConfusion::f1_similar() const { return f1(tp, fp, fn); }
double PairConfusion::f1_dissimilar() const { return f1(tn, fn, fp); }

void to_json(json& j, const PairF1Report& r) {
  auto counts = [](const PairConfusion& c) {
    return json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn},
                {"similar_pairs", c.similar_pairs()}, {"dissimilar_pairs", c.dissimilar_pairs()}};
  };
  j = json{{"base", {{"dis", r.base_dis}, {"sim", r.base_sim}, {"counts", counts(r.base)}}},
           {"novel", {{"dis", r.novel_dis}, {"sim", r.novel_sim}, {"counts", counts(r.novel)}}},
           {"image_pairs", r.image_pairs}};
}

LoadedCorpus LoadedCorpus::load(const DatasetManifest& manifest) {
  LoadedCorpus c;
  c.manifest = manifest;
  for (const auto& id : manifest.train_ids) {
    c.train_index[id] = c.train_full.size();
    c.train_full.push_back(load_full_sample(manifest, "train", id));
    c.train_weak.push_back(make_weakshot(c.train_full.back(), manifest.split));
  }
  for (const auto& id : manifest.test_ids) c.test.push_back(load_full_sample(manifest, "test", id));
  return c;
}

PairF1Report eval_pair_f1(const LoadedCorpus& corpus, int num_image_pairs, int j, Rng& rng, const PairScorer& scorer) {
  if (corpus.train_weak.empty()) throw std::invalid_argument("eval_pair_f1: empty training set");
  PairF1Report r;
  std::uniform_int_distribution<std::size_t> pick(0, corpus.train_weak.size() - 1);
  for (int p = 0; p < num_image_pairs; ++p) {
    const std::size_t in_idx = pick(rng);
    const auto& input = corpus.train_weak[in_idx];
    const auto ref_pick = sample_reference(input, corpus.manifest, rng);
    const std::size_t ref_idx = corpus.train_index.at(ref_pick.id);
    const auto& ref = corpus.train_weak[ref_idx];

    auto base = sample_pair_coords(input.mask, ref.mask, corpus.manifest.split, PairRegion::kBase, j, rng);
    if (!base.skipped) {
      r.base.add(scorer(base, in_idx, ref_idx), pair_labels(base.input_class, base.ref_class));
    }
    auto novel = sample_pair_coords(input.mask, ref.mask, corpus.manifest.split, PairRegion::kNotBase, j, rng);
    if (!novel.skipped) {
      std::vector<int> in_cls, ref_cls;
      for (const auto& px : novel.input) in_cls.push_back(corpus.train_full[in_idx].mask.at(px.h, px.w));
      for (const auto& px : novel.ref) ref_cls.push_back(corpus.train_full[ref_idx].mask.at(px.h, px.w));
      r.novel.add(scorer(novel, in_idx, ref_idx), pair_labels(in_cls, ref_cls));
    }
    ++r.image_pairs;
  }
  r.base_dis = r.base.f1_dissimilar();
  r.base_sim = r.base.f1_similar();
  r.novel_dis = r.novel.f1_dissimilar();
  r.novel_sim = r.novel.f1_similar();
  return r;
}

PairF1Report eval_simnet_f1(SimFormerModel& model, const LoadedCorpus& corpus, int num_image_pairs, int j, Rng& rng) {
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  const auto dtype = model->queries().scalar_type();
  std::size_t cached_in = SIZE_MAX, cached_ref = SIZE_MAX;
  torch::Tensor pix;  // [2, C, H, W]
  PairScorer scorer = [&](const PairCoords& coords, std::size_t in_idx, std::size_t ref_idx) {
    if (in_idx != cached_in || ref_idx != cached_ref) {
      auto images = torch::stack({image_to_tensor(corpus.train_weak[in_idx].image, dtype),
                                  image_to_tensor(corpus.train_weak[ref_idx].image, dtype)});
      pix = model->forward(images).pixel_embed;
      cached_in = in_idx;
      cached_ref = ref_idx;
    }
    return model->simnet()->score_grid(gather_pixel_embeddings(pix[0], coords.input),
                                       gather_pixel_embeddings(pix[1], coords.ref));
  };
  auto report = eval_pair_f1(corpus, num_image_pairs, j, rng, scorer);
  if (was_training) model->train();
  return report;
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.1f±%.2f", mean, std);
  return buf;
}

void to_json(json& j, const SignificanceResult& r) {
  j = json{{"p_value", r.p_value},   {"t_statistic", r.t_statistic}, {"dof", r.dof},
           {"mean_a", r.mean_a},     {"std_a", r.std_a},             {"mean_b", r.mean_b},
           {"std_b", r.std_b},       {"summary_a", r.summary_a},     {"summary_b", r.summary_b},
           {"significant_at_0_05", r.p_value < 0.05}};
}

SignificanceResult significance_test(const std::vector<double>& runs_a, const std::vector<double>& runs_b) {
  if (runs_a.size() < 2 || runs_b.size() < 2) {
    throw std::invalid_argument("significance_test: need at least two runs per side");
  }
  auto stats = [](const std::vector<double>& x) {
    const double n = static_cast<double>(x.size());
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [ma, va] = stats(runs_a);
  const auto [mb, vb] = stats(runs_b);
  SignificanceResult r;
  r.mean_a = ma;
  r.mean_b = mb;
  r.std_a = std::sqrt(va);
  r.std_b = std::sqrt(vb);
  r.summary_a = format_mean_std(ma, r.std_a);
  r.summary_b = format_mean_std(mb, r.std_b);

  const double na = static_cast<double>(runs_a.size()), nb = static_cast<double>(runs_b.size());
  const double se2 = va / na + vb / nb;
  if (se2 == 0.0) {
    // Zero variance on both sides: decided by the means alone.
    r.p_value = ma == mb ? 1.0 : 0.0;
    r.t_statistic = ma == mb ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), ma - mb);
    r.dof = na + nb - 2.0;
    return r;
  }
  r.t_statistic = (ma - mb) / std::sqrt(se2);
  r.dof = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
  boost::math::students_t dist(r.dof);
  r.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t_statistic)));
  r.p_value = std::min(1.0, r.p_value);
  return r;
}

}  // namespace simformer
