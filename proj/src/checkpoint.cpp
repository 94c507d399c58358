#include "simformer/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace simformer {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'S', 'I', 'M', 'F', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    default: throw std::invalid_argument("checkpoint: unsupported dtype");
  }
}

torch::ScalarType dtype_from(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  throw std::runtime_error("checkpoint: unknown dtype " + name);
}

}  // namespace

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  json table = json::array();
  std::uint64_t offset = 0;
  std::vector<torch::Tensor> payloads;
  for (const auto& [name, tensor] : ckpt.tensors) {
    auto t = tensor.detach().contiguous().cpu();
    const std::uint64_t nbytes = t.numel() * t.element_size();
    table.push_back({{"name", name}, {"shape", t.sizes().vec()}, {"dtype", dtype_name(t.scalar_type())},
                     {"offset", offset}, {"nbytes", nbytes}});
    offset += nbytes;
    payloads.push_back(t);
  }
  const std::string header = json{{"model_config", ckpt.config}, {"tensors", table}, {"metadata", ckpt.metadata}}.dump();

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("io_error: cannot write checkpoint " + path.string());
    const std::uint64_t header_len = header.size();
    out.write(kMagic, sizeof(kMagic));
    out.write(reinterpret_cast<const char*>(&kVersion), sizeof(kVersion));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : payloads) {
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.numel() * t.element_size()));
    }
    if (!out) throw std::runtime_error("io_error: short write on checkpoint " + path.string());
  }
  fs::rename(tmp, path);
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("io_error: cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path.string());
  }
  if (version != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  json j = json::parse(header);

  Checkpoint ckpt;
  j.at("model_config").get_to(ckpt.config);
  ckpt.metadata = j.value("metadata", json::object());
  const auto base = in.tellg();
  for (const auto& entry : j.at("tensors")) {
    auto shape = entry.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype_from(entry.at("dtype"))));
    const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
    if (nbytes != static_cast<std::uint64_t>(t.numel() * t.element_size())) {
      throw std::runtime_error("checkpoint: size mismatch for " + entry.at("name").get<std::string>());
    }
    in.seekg(base + static_cast<std::streamoff>(entry.at("offset").get<std::uint64_t>()));
    in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
    if (!in) throw std::runtime_error("checkpoint: truncated payload in " + path.string());
    ckpt.tensors.emplace(entry.at("name").get<std::string>(), t);
  }
  return ckpt;
}

std::map<std::string, torch::Tensor> model_tensors(SimFormerModel& model) {
  std::map<std::string, torch::Tensor> out;
  for (const auto& item : model->named_parameters()) out.emplace(item.key(), item.value());
  return out;
}

void load_model_tensors(SimFormerModel& model, const std::map<std::string, torch::Tensor>& tensors) {
  torch::NoGradGuard no_grad;
  for (auto& item : model->named_parameters()) {
    auto it = tensors.find(item.key());
    if (it == tensors.end()) throw std::runtime_error("checkpoint: missing parameter " + item.key());
    if (it->second.sizes() != item.value().sizes()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + item.key());
    }
    item.value().copy_(it->second);
  }
}

SimFormerModel load_model(const fs::path& path) {
  auto ckpt = read_checkpoint(path);
  SimFormerModel model(ckpt.config);
  auto first = ckpt.tensors.find("queries");
  if (first != ckpt.tensors.end() && first->second.scalar_type() == torch::kFloat64) model->to(torch::kFloat64);
  load_model_tensors(model, ckpt.tensors);
  model->eval();
  return model;
}

}  // namespace simformer
