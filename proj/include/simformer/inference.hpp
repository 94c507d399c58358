#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

#include "simformer/common.hpp"
#include "simformer/model.hpp"
#include "simformer/synthdata.hpp"

namespace simformer {

struct SegmentationResult {
  LabelMap labels;       // per-pixel semantic class
  torch::Tensor scores;  // [K, H, W] fused scores
};

/// scores[c] = Σ_i Y[c,i]·M[i]; labels = per-pixel argmax over the K semantic
/// rows (the no-object row is excluded), ties to the smallest class ID.
/// Y [K+1, N], M [N, H, W].
SegmentationResult semantic_segment(const torch::Tensor& class_probs, const torch::Tensor& mask_probs);

/// Mixed labels for re-training: base GT pixels are kept, ignore pixels take
/// the prediction unless the predicted class is absent from the image labels
/// (then they stay ignore). With `min_confidence` > 0, predictions whose fused
/// score falls below it also stay ignore.
LabelMap make_pseudo_labels(const WeakShotSample& sample, const SegmentationResult& result, const ClassSplit& split,
                            double min_confidence = 0.0);

/// HWC image -> [3, H, W] tensor of the given dtype.
torch::Tensor image_to_tensor(const Image& image, torch::ScalarType dtype = torch::kFloat32);

/// Runs the model in eval mode without gradients and fuses every image.
/// All images must share one size.
std::vector<SegmentationResult> segment_images(SimFormerModel& model, const std::vector<const Image*>& images,
                                               int batch_size = 16);

/// Fused scores as raw little-endian float32 plus a JSON sidecar with the shape.
void write_scores(const std::filesystem::path& path, const torch::Tensor& scores);

}  // namespace simformer
