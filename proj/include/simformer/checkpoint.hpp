#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "simformer/model.hpp"

namespace simformer {

/// On-disk archive: "SIMFCKPT" magic, u32 version, u64 header length, a JSON
/// header (model config, tensor table, free-form metadata) and the raw
/// little-endian tensor payloads in table order.
struct Checkpoint {
  ModelConfig config;
  std::map<std::string, torch::Tensor> tensors;
  nlohmann::json metadata = nlohmann::json::object();
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Parameters keyed by module path ("backbone_stage1.conv1.weight", ...).
std::map<std::string, torch::Tensor> model_tensors(SimFormerModel& model);

/// Copies tensors into the model; every model parameter must be present with
/// the same shape, otherwise std::runtime_error.
void load_model_tensors(SimFormerModel& model, const std::map<std::string, torch::Tensor>& tensors);

SimFormerModel load_model(const std::filesystem::path& path);

}  // namespace simformer
