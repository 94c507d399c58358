#include "simformer/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <tuple>

namespace simformer {

namespace {

using PixelsByClass = std::map<int, std::vector<Pixel>>;

PixelsByClass base_pixels(const LabelMap& mask, const ClassSplit& split) {
  PixelsByClass out;
  for (int h = 0; h < mask.height; ++h)
    for (int w = 0; w < mask.width; ++w) {
      const int v = mask.at(h, w);
      if (split.is_base(v)) out[v].push_back({h, w});
    }
  return out;
}

std::vector<Pixel> ignore_pixels(const LabelMap& mask, const ClassSplit& split) {
  std::vector<Pixel> out;
  for (int h = 0; h < mask.height; ++h)
    for (int w = 0; w < mask.width; ++w)
      if (mask.at(h, w) == split.ignore_id) out.push_back({h, w});
  return out;
}

// Draws `count` pixels; without replacement when the pool is large enough.
void draw(const std::vector<Pixel>& pool, int count, Rng& rng, std::vector<Pixel>& out) {
  if (count <= 0) return;
  if (static_cast<int>(pool.size()) >= count) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (int i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(pool[idx[i]]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (int i = 0; i < count; ++i) out.push_back(pool[pick(rng)]);
  }
}

// Splits `total` as evenly as possible over `parts` slots.
std::vector<int> even_split(int total, int parts) {
  std::vector<int> out(parts, parts > 0 ? total / parts : 0);
  for (int i = 0; i < parts && i < total % std::max(parts, 1); ++i) ++out[i];
  return out;
}

struct ClassCounts {
  std::map<int, int> input;
  std::map<int, int> ref;
  double same_fraction = 0.0;
};

// Per-class draw counts for both images: k shared classes take n_in / n_ref
// of the J slots, the remaining classes share the rest.
ClassCounts plan_counts(const std::vector<int>& shared, const std::vector<int>& in_rest,
                        const std::vector<int>& ref_rest, int k, int n_in, int n_ref, int j) {
  ClassCounts cc;
  const auto s_in = even_split(n_in, k), s_ref = even_split(n_ref, k);
  for (int i = 0; i < k; ++i) {
    cc.input[shared[i]] += s_in[i];
    cc.ref[shared[i]] += s_ref[i];
    cc.same_fraction += static_cast<double>(s_in[i]) * s_ref[i];
  }
  const auto r_in = even_split(j - n_in, static_cast<int>(in_rest.size()));
  const auto r_ref = even_split(j - n_ref, static_cast<int>(ref_rest.size()));
  for (std::size_t i = 0; i < in_rest.size(); ++i) cc.input[in_rest[i]] += r_in[i];
  for (std::size_t i = 0; i < ref_rest.size(); ++i) cc.ref[ref_rest[i]] += r_ref[i];
  cc.same_fraction /= static_cast<double>(j) * j;
  return cc;
}

ClassCounts balance_counts(const PixelsByClass& a, const PixelsByClass& b, int j, Rng& rng) {
  std::vector<int> shared, in_rest, ref_rest;
  for (const auto& [c, _] : a) (b.count(c) ? shared : in_rest).push_back(c);
  for (const auto& [c, _] : b)
    if (!a.count(c)) ref_rest.push_back(c);
  std::shuffle(shared.begin(), shared.end(), rng);
  std::shuffle(in_rest.begin(), in_rest.end(), rng);
  std::shuffle(ref_rest.begin(), ref_rest.end(), rng);

  if (shared.empty()) {
    return plan_counts(shared, in_rest, ref_rest, 0, 0, 0, j);
  }
  // Exhaustive search over (k, n_in, n_ref) for the realized same-class
  // fraction nearest 0.5; ties prefer more shared classes, then symmetric
  // and smaller allocations.
  using Key = std::tuple<double, int, int, int>;
  Key best{2.0, 0, 0, 0};
  int best_k = 0, best_in = 0, best_ref = 0;
  for (int k = 1; k <= static_cast<int>(shared.size()); ++k) {
    const int lo_in = in_rest.empty() ? j : k;
    const int lo_ref = ref_rest.empty() ? j : k;
    const int hi_in = j - static_cast<int>(in_rest.size());
    const int hi_ref = j - static_cast<int>(ref_rest.size());
    for (int n_in = lo_in; n_in <= hi_in; ++n_in) {
      for (int n_ref = lo_ref; n_ref <= hi_ref; ++n_ref) {
        // even_split puts the remainder on the first classes of both sides.
        double same = 0.0;
        const int q_in = n_in / k, r_in = n_in % k, q_ref = n_ref / k, r_ref = n_ref % k;
        for (int i = 0; i < k; ++i) same += static_cast<double>(q_in + (i < r_in)) * (q_ref + (i < r_ref));
        const double f = same / (static_cast<double>(j) * j);
        const double gap = std::round(std::fabs(f - 0.5) * 1e9) / 1e9;
        Key key{gap, -k, std::abs(n_in - n_ref), n_in + n_ref};
        if (key < best) {
          best = key;
          best_k = k;
          best_in = n_in;
          best_ref = n_ref;
        }
      }
    }
  }
  if (best_k == 0) {
    // Only reachable when J is smaller than the number of classes to cover.
    return plan_counts(shared, in_rest, ref_rest, static_cast<int>(shared.size()),
                       in_rest.empty() ? j : j / 2, ref_rest.empty() ? j : j / 2, j);
  }
  return plan_counts(shared, in_rest, ref_rest, best_k, best_in, best_ref, j);
}

}  // namespace

PairCoords sample_pair_coords(const LabelMap& input_mask, const LabelMap& ref_mask, const ClassSplit& split,
                              PairRegion region, int j, Rng& rng) {
  if (j < 2) throw std::invalid_argument("sample_pixel_pairs: J must be at least 2");
  PairCoords out;
  out.region = region;

  if (region == PairRegion::kNotBase) {
    const auto a = ignore_pixels(input_mask, split);
    const auto b = ignore_pixels(ref_mask, split);
    if (a.empty() || b.empty()) {
      out.skipped = true;
      return out;
    }
    draw(a, j, rng, out.input);
    draw(b, j, rng, out.ref);
  } else {
    const auto a = base_pixels(input_mask, split);
    const auto b = base_pixels(ref_mask, split);
    if (a.empty() || b.empty()) {
      out.skipped = true;
      return out;
    }
    const auto counts = balance_counts(a, b, j, rng);
    for (const auto& [c, n] : counts.input) draw(a.at(c), n, rng, out.input);
    for (const auto& [c, n] : counts.ref) draw(b.at(c), n, rng, out.ref);
    std::shuffle(out.input.begin(), out.input.end(), rng);
    std::shuffle(out.ref.begin(), out.ref.end(), rng);
  }

  for (const auto& p : out.input) out.input_class.push_back(input_mask.at(p.h, p.w));
  for (const auto& p : out.ref) out.ref_class.push_back(ref_mask.at(p.h, p.w));
  if (region == PairRegion::kBase) {
    double same = 0.0;
    for (int a : out.input_class)
      for (int b : out.ref_class) same += (a == b);
    out.same_fraction = same / (static_cast<double>(j) * j);
    out.balanced = out.same_fraction >= 0.3 && out.same_fraction <= 0.7;
  }
  return out;
}

torch::Tensor gather_pixel_embeddings(const torch::Tensor& pix, const std::vector<Pixel>& coords) {
  const int64_t h = pix.size(1), w = pix.size(2);
  std::vector<int64_t> flat;
  flat.reserve(coords.size());
  for (const auto& p : coords) {
    if (p.h < 0 || p.h >= h || p.w < 0 || p.w >= w) throw std::invalid_argument("pixel coordinate out of bounds");
    flat.push_back(static_cast<int64_t>(p.h) * w + p.w);
  }
  auto index = torch::tensor(flat, torch::kInt64);
  return pix.reshape({pix.size(0), h * w}).index_select(1, index).t();
}

torch::Tensor pair_labels(const std::vector<int>& input_class, const std::vector<int>& ref_class,
                          torch::TensorOptions opts) {
  auto a = torch::tensor(std::vector<int64_t>(input_class.begin(), input_class.end()), torch::kInt64);
  auto b = torch::tensor(std::vector<int64_t>(ref_class.begin(), ref_class.end()), torch::kInt64);
  return (a.unsqueeze(1) == b.unsqueeze(0)).to(opts.dtype());
}

PixelPairBatch sample_pixel_pairs(const LabelMap& input_mask, const torch::Tensor& input_pix, const LabelMap& ref_mask,
                                  const torch::Tensor& ref_pix, const ClassSplit& split, PairRegion region, int j,
                                  Rng& rng, bool materialize) {
  PixelPairBatch batch;
  batch.coords = sample_pair_coords(input_mask, ref_mask, split, region, j, rng);
  if (batch.coords.skipped) return batch;
  batch.input_embed = gather_pixel_embeddings(input_pix, batch.coords.input);
  batch.ref_embed = gather_pixel_embeddings(ref_pix, batch.coords.ref);
  if (materialize) {
    const int64_t c = batch.input_embed.size(1);
    auto a = batch.input_embed.t().unsqueeze(2).expand({c, j, j});
    auto b = batch.ref_embed.t().unsqueeze(1).expand({c, j, j});
    batch.pair_embeddings = torch::cat({a, b}, 0);
  }
  if (region == PairRegion::kBase) {
    batch.labels = pair_labels(batch.coords.input_class, batch.coords.ref_class, input_pix.options());
  }
  return batch;
}

torch::Tensor gather_novel_scores(const torch::Tensor& class_probs, const torch::Tensor& mask_probs,
                                  const ClassSplit& split, const std::vector<Pixel>& coords) {
  const int64_t n = mask_probs.size(0), h = mask_probs.size(1), w = mask_probs.size(2);
  std::vector<int64_t> flat;
  flat.reserve(coords.size());
  for (const auto& p : coords) {
    if (p.h < 0 || p.h >= h || p.w < 0 || p.w >= w) {
      throw std::invalid_argument("gather_novel_scores: coordinate out of bounds");
    }
    flat.push_back(static_cast<int64_t>(p.h) * w + p.w);
  }
  auto rows = torch::tensor(std::vector<int64_t>(split.novel_ids.begin(), split.novel_ids.end()), torch::kInt64);
  auto y_novel = class_probs.index_select(0, rows);  // [|Cn|, N]
  auto m_at = mask_probs.reshape({n, h * w}).index_select(1, torch::tensor(flat, torch::kInt64));  // [N, J]
  return torch::matmul(y_novel, m_at);
}

}  // namespace simformer
