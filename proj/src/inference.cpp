#include "simformer/inference.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace simformer {

SegmentationResult semantic_segment(const torch::Tensor& class_probs, const torch::Tensor& mask_probs) {
  torch::NoGradGuard no_grad;
  const int64_t k = class_probs.size(0) - 1;
  const int64_t n = class_probs.size(1);
  if (mask_probs.size(0) != n) throw std::invalid_argument("semantic_segment: proposal count mismatch");
  const int64_t h = mask_probs.size(1), w = mask_probs.size(2);

  // Accumulate proposal by proposal so every pixel sums in index order.
  auto scores = torch::zeros({k, h, w}, mask_probs.options());
  for (int64_t i = 0; i < n; ++i) {
    scores += class_probs.narrow(0, 0, k).select(1, i).view({k, 1, 1}) * mask_probs[i].unsqueeze(0);
  }
  // argmax returns the first maximal index, which is the smallest class ID.
  auto arg = scores.argmax(0).to(torch::kUInt8).contiguous();

  SegmentationResult out;
  out.scores = scores;
  out.labels = LabelMap(static_cast<int>(h), static_cast<int>(w));
  std::memcpy(out.labels.data.data(), arg.data_ptr<std::uint8_t>(), out.labels.data.size());
  return out;
}

LabelMap make_pseudo_labels(const WeakShotSample& sample, const SegmentationResult& result, const ClassSplit& split,
                            double min_confidence) {
  if (sample.mask.height != result.labels.height || sample.mask.width != result.labels.width) {
    throw std::invalid_argument("make_pseudo_labels: resolution mismatch");
  }
  LabelMap out = sample.mask;
  torch::Tensor best = std::get<0>(result.scores.max(0)).to(torch::kFloat64).contiguous();
  auto conf = best.accessor<double, 2>();
  for (int h = 0; h < out.height; ++h) {
    for (int w = 0; w < out.width; ++w) {
      if (sample.mask.at(h, w) != split.ignore_id) continue;
      const int pred = result.labels.at(h, w);
      bool keep = sample.image_labels.count(pred) > 0;
      if (keep && min_confidence > 0.0) keep = conf[h][w] >= min_confidence;
      out.at(h, w) = static_cast<std::uint8_t>(keep ? pred : split.ignore_id);
    }
  }
  return out;
}

torch::Tensor image_to_tensor(const Image& image, torch::ScalarType dtype) {
  if (image.channels != 3) throw std::invalid_argument("image_to_tensor: expected 3 channels");
  auto t = torch::from_blob(const_cast<float*>(image.data.data()), {image.height, image.width, 3}, torch::kFloat32);
  return t.permute({2, 0, 1}).to(dtype).contiguous();
}

std::vector<SegmentationResult> segment_images(SimFormerModel& model, const std::vector<const Image*>& images,
                                               int batch_size) {
  torch::NoGradGuard no_grad;
  const bool was_training = model->is_training();
  model->eval();
  const auto dtype = model->queries().scalar_type();
  std::vector<SegmentationResult> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch_size) {
    const std::size_t stop = std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<torch::Tensor> batch;
    for (std::size_t i = start; i < stop; ++i) batch.push_back(image_to_tensor(*images[i], dtype));
    const auto outputs = model->forward(torch::stack(batch));
    for (std::size_t i = 0; i < stop - start; ++i) {
      const auto one = outputs.image(static_cast<int>(i));
      out.push_back(semantic_segment(one.class_probs, one.mask_probs));
    }
  }
  if (was_training) model->train();
  return out;
}

void write_scores(const std::filesystem::path& path, const torch::Tensor& scores) {
  auto t = scores.detach().to(torch::kFloat32).contiguous().cpu();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("io_error: cannot write " + path.string());
  out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  std::ofstream header(path.string() + ".json");
  header << nlohmann::json{{"dtype", "float32"}, {"shape", t.sizes().vec()}, {"layout", "class,height,width"}}.dump()
         << '\n';
}

}  // namespace simformer
