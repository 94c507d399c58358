#pragma once

#include <torch/torch.h>

#include <vector>

#include "simformer/common.hpp"
#include "simformer/synthdata.hpp"

namespace simformer {

enum class PairRegion { kBase, kNotBase };

/// Pixel coordinates drawn from an (input, reference) image pair.
struct PairCoords {
  std::vector<Pixel> input;
  std::vector<Pixel> ref;
  std::vector<int> input_class;  // mask value at each input coordinate
  std::vector<int> ref_class;
  PairRegion region = PairRegion::kBase;
  bool skipped = false;   // region empty in at least one image
  bool balanced = false;  // same-class pair fraction inside [0.3, 0.7]
  double same_fraction = 0.0;
};

struct PixelPairBatch {
  PairCoords coords;
  torch::Tensor input_embed;      // [J, C] pixel embeddings at coords.input
  torch::Tensor ref_embed;        // [J, C] pixel embeddings at coords.ref
  torch::Tensor pair_embeddings;  // [2C, J, J]; only when materialized
  torch::Tensor labels;           // [J, J] in {0,1}; base batches only

  bool skipped() const { return coords.skipped; }
};

/// Draws J pixels per image from the requested region.
/// Base region: class-aware draw whose per-class counts are chosen so the
/// fraction of same-class cross pairs is as close to 0.5 as the classes allow.
/// Not-base region: uniform draw over ignore pixels. Thin regions are sampled
/// with replacement; an empty region yields a skipped result.
PairCoords sample_pair_coords(const LabelMap& input_mask, const LabelMap& ref_mask, const ClassSplit& split,
                              PairRegion region, int j, Rng& rng);

/// Gathers embeddings for sampled coordinates and, when `materialize` is set,
/// the concatenated [2C, J, J] pair grid. pixel embeddings are [C, H, W].
PixelPairBatch sample_pixel_pairs(const LabelMap& input_mask, const torch::Tensor& input_pix, const LabelMap& ref_mask,
                                  const torch::Tensor& ref_pix, const ClassSplit& split, PairRegion region, int j,
                                  Rng& rng, bool materialize = true);

/// Embeddings [J, C] of `pix` ([C, H, W]) at `coords`.
torch::Tensor gather_pixel_embeddings(const torch::Tensor& pix, const std::vector<Pixel>& coords);

/// Same-class labels [J_in, J_ref] from class lists.
torch::Tensor pair_labels(const std::vector<int>& input_class, const std::vector<int>& ref_class,
                          torch::TensorOptions opts = torch::kFloat32);

/// Fused novel-class scores Σ_i Y[c,i]·M[i,h_j,w_j] for c ∈ novel classes at
/// each coordinate. Y [K+1, N], M [N, H, W] -> [|Cn|, J].
torch::Tensor gather_novel_scores(const torch::Tensor& class_probs, const torch::Tensor& mask_probs,
                                  const ClassSplit& split, const std::vector<Pixel>& coords);

}  // namespace simformer
