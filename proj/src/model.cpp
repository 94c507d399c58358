#include "simformer/model.hpp"

#include <cmath>
#include <stdexcept>

namespace simformer {

namespace F = torch::nn::functional;
using nlohmann::json;

void ModelConfig::validate() const {
  if (embed_dim <= 0) throw std::invalid_argument("model config: embed_dim must be positive");
  if (num_queries <= 0) throw std::invalid_argument("model config: num_queries must be positive");
  if (num_classes < 2) throw std::invalid_argument("model config: need at least two classes");
  if (backbone_channels.size() != 3) throw std::invalid_argument("model config: backbone needs 3 stages");
  if (num_heads <= 0 || embed_dim % num_heads != 0) {
    throw std::invalid_argument("model config: embed_dim must be divisible by num_heads");
  }
  if (mask_head_layers < 1 || simnet_layers < 2) throw std::invalid_argument("model config: bad head depth");
}

void to_json(json& j, const ModelConfig& c) {
  j = json{{"embed_dim", c.embed_dim},
           {"num_queries", c.num_queries},
           {"num_classes", c.num_classes},
           {"height", c.height},
           {"width", c.width},
           {"backbone_channels", c.backbone_channels},
           {"decoder_layers", c.decoder_layers},
           {"num_heads", c.num_heads},
           {"ffn_dim", c.ffn_dim},
           {"mask_head_layers", c.mask_head_layers},
           {"simnet_hidden", c.simnet_hidden},
           {"simnet_layers", c.simnet_layers}};
}

void from_json(const json& j, ModelConfig& c) {
  ModelConfig d;
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.num_queries = j.value("num_queries", d.num_queries);
  c.num_classes = j.value("num_classes", d.num_classes);
  c.height = j.value("height", d.height);
  c.width = j.value("width", d.width);
  c.backbone_channels = j.value("backbone_channels", d.backbone_channels);
  c.decoder_layers = j.value("decoder_layers", d.decoder_layers);
  c.num_heads = j.value("num_heads", d.num_heads);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.mask_head_layers = j.value("mask_head_layers", d.mask_head_layers);
  c.simnet_hidden = j.value("simnet_hidden", d.simnet_hidden);
  c.simnet_layers = j.value("simnet_layers", d.simnet_layers);
}

ModelOutputs ModelOutputs::image(int b) const {
  return {prop_embed[b], pixel_embed[b], class_probs[b], mask_probs[b]};
}

ConvStageImpl::ConvStageImpl(int in, int out, int stride) {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
  conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
}

torch::Tensor ConvStageImpl::forward(const torch::Tensor& x) {
  return F::gelu(conv2(F::gelu(conv1(x))));
}

AttentionImpl::AttentionImpl(int dim, int num_heads) : heads(num_heads) {
  q_proj = register_module("q_proj", torch::nn::Linear(dim, dim));
  k_proj = register_module("k_proj", torch::nn::Linear(dim, dim));
  v_proj = register_module("v_proj", torch::nn::Linear(dim, dim));
  out_proj = register_module("out_proj", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& key, const torch::Tensor& value) {
  const auto b = query.size(0), nq = query.size(1), nk = key.size(1), c = query.size(2);
  const auto d = c / heads;
  auto split = [&](const torch::Tensor& t, int64_t n) { return t.view({b, n, heads, d}).transpose(1, 2); };
  auto q = split(q_proj(query), nq);
  auto k = split(k_proj(key), nk);
  auto v = split(v_proj(value), nk);
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(d)), -1);
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, nq, c});
  return out_proj(out);
}

DecoderLayerImpl::DecoderLayerImpl(int dim, int heads, int ffn_dim) {
  self_attn = register_module("self_attn", Attention(dim, heads));
  cross_attn = register_module("cross_attn", Attention(dim, heads));
  ffn1 = register_module("ffn1", torch::nn::Linear(dim, ffn_dim));
  ffn2 = register_module("ffn2", torch::nn::Linear(ffn_dim, dim));
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm3 = register_module("norm3", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
}

torch::Tensor DecoderLayerImpl::forward(const torch::Tensor& queries, const torch::Tensor& memory,
                                        const torch::Tensor& memory_pos) {
  auto q = norm1(queries + self_attn(queries, queries, queries));
  q = norm2(q + cross_attn(q, memory + memory_pos, memory));
  return norm3(q + ffn2(F::gelu(ffn1(q))));
}

SimNetImpl::SimNetImpl(int dim, int hidden, int layers) : embed_dim(dim) {
  fcs = register_module("fcs", torch::nn::ModuleList());
  fcs->push_back(torch::nn::Linear(2 * dim, hidden));
  for (int i = 0; i < layers - 2; ++i) fcs->push_back(torch::nn::Linear(hidden, hidden));
  fcs->push_back(torch::nn::Linear(hidden, 1));
}

torch::Tensor SimNetImpl::logits_from_hidden(torch::Tensor h) {
  // h is the pre-activation output of the first layer.
  for (std::size_t i = 1; i < fcs->size(); ++i) {
    h = fcs[i]->as<torch::nn::Linear>()->forward(F::gelu(h));
  }
  return h.squeeze(-1);
}

torch::Tensor SimNetImpl::forward(const torch::Tensor& pair_embeddings) {
  if (pair_embeddings.dim() != 2 || pair_embeddings.size(0) != 2 * embed_dim) {
    throw std::invalid_argument("simnet: pair embeddings must be [2C, P] with 2C = " +
                                std::to_string(2 * embed_dim));
  }
  auto h = fcs[0]->as<torch::nn::Linear>()->forward(pair_embeddings.t());
  return torch::sigmoid(logits_from_hidden(h));
}

torch::Tensor SimNetImpl::score_grid(const torch::Tensor& first, const torch::Tensor& second) {
  if (first.dim() != 2 || second.dim() != 2 || first.size(1) != embed_dim || second.size(1) != embed_dim) {
    throw std::invalid_argument("simnet: score_grid expects [J, C] embeddings");
  }
  auto* fc = fcs[0]->as<torch::nn::Linear>();
  auto w_first = fc->weight.narrow(1, 0, embed_dim);
  auto w_second = fc->weight.narrow(1, embed_dim, embed_dim);
  auto a = torch::matmul(first, w_first.t());    // [Ja, h]
  auto b = torch::matmul(second, w_second.t());  // [Jb, h]
  auto h = a.unsqueeze(1) + b.unsqueeze(0) + fc->bias;
  return torch::sigmoid(logits_from_hidden(h));
}

SimFormerModelImpl::SimFormerModelImpl(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const int c = config_.embed_dim;
  const auto& ch = config_.backbone_channels;
  stage1_ = register_module("backbone_stage1", ConvStage(3, ch[0], 2));
  stage2_ = register_module("backbone_stage2", ConvStage(ch[0], ch[1], 2));
  stage3_ = register_module("backbone_stage3", ConvStage(ch[1], ch[2], 1));

  dec_lateral_ = register_module("pixdec_lateral", torch::nn::Conv2d(torch::nn::Conv2dOptions(ch[2], c, 1)));
  dec_mid_ = register_module("pixdec_mid", torch::nn::Conv2d(torch::nn::Conv2dOptions(c + ch[0], c, 3).padding(1)));
  dec_fine_ = register_module("pixdec_fine", torch::nn::Conv2d(torch::nn::Conv2dOptions(c + 3, c, 3).padding(1)));
  dec_out_ = register_module("pixdec_out", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, c, 1)));

  memory_proj_ = register_module("memory_proj", torch::nn::Linear(ch[2], c));
  pos_fc1_ = register_module("pos_fc1", torch::nn::Linear(2, c));
  pos_fc2_ = register_module("pos_fc2", torch::nn::Linear(c, c));

  queries_ = register_parameter("queries", torch::randn({c, config_.num_queries}));
  decoder_ = register_module("decoder", torch::nn::ModuleList());
  for (int i = 0; i < config_.decoder_layers; ++i) {
    decoder_->push_back(DecoderLayer(c, config_.num_heads, config_.ffn_dim));
  }
  decoder_norm_ = register_module("decoder_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c})));

  classifier_ = register_module("classifier", torch::nn::Linear(c, config_.num_classes + 1));
  mask_mlp_ = register_module("mask_mlp", torch::nn::ModuleList());
  for (int i = 0; i < config_.mask_head_layers; ++i) mask_mlp_->push_back(torch::nn::Linear(c, c));

  simnet_ = register_module("simnet", SimNet(c, config_.simnet_hidden, config_.simnet_layers));
}

torch::Tensor SimFormerModelImpl::memory_positions(int h, int w, const torch::TensorOptions& opts) {
  auto ys = (torch::arange(h, opts) + 0.5) / h;
  auto xs = (torch::arange(w, opts) + 0.5) / w;
  auto grid = torch::stack(torch::meshgrid({ys, xs}, "ij"), -1).view({h * w, 2});
  return pos_fc2_(F::gelu(pos_fc1_(grid)));
}

torch::Tensor SimFormerModelImpl::pixel_decoder(const torch::Tensor& images, const torch::Tensor& f1,
                                                const torch::Tensor& f3) {
  auto up = [](const torch::Tensor& x, const torch::Tensor& like) {
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{like.size(2), like.size(3)})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
  };
  auto x = dec_lateral_(f3);
  x = F::gelu(dec_mid_(torch::cat({up(x, f1), f1}, 1)));
  x = F::gelu(dec_fine_(torch::cat({up(x, images), images}, 1)));
  return dec_out_(x);
}

ModelOutputs SimFormerModelImpl::forward(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) {
    throw std::invalid_argument("model forward: expected images [B, 3, H, W]");
  }
  const auto h = images.size(2), w = images.size(3);
  if (h < ModelConfig::kStride || w < ModelConfig::kStride || h % ModelConfig::kStride != 0 ||
      w % ModelConfig::kStride != 0) {
    throw std::invalid_argument("model forward: input " + std::to_string(h) + "x" + std::to_string(w) +
                                " is not a positive multiple of the backbone stride " +
                                std::to_string(ModelConfig::kStride));
  }
  const auto b = images.size(0);
  auto f1 = stage1_(images);
  auto f3 = stage3_(stage2_(f1));

  ModelOutputs out;
  out.pixel_embed = pixel_decoder(images, f1, f3);

  const auto fh = f3.size(2), fw = f3.size(3);
  auto memory = memory_proj_(f3.flatten(2).transpose(1, 2));  // [B, fh*fw, C]
  auto pos = memory_positions(static_cast<int>(fh), static_cast<int>(fw), memory.options()).unsqueeze(0);
  auto q = queries_.t().unsqueeze(0).expand({b, -1, -1});  // [B, N, C]
  for (auto& layer : *decoder_) {
    q = layer->as<DecoderLayer>()->forward(q, memory, pos);
  }
  out.prop_embed = decoder_norm_(q).transpose(1, 2);  // [B, C, N]
  out.class_probs = classify_proposals(out.prop_embed);
  out.mask_probs = compute_masks(out.prop_embed, out.pixel_embed);
  return out;
}

torch::Tensor SimFormerModelImpl::classify_proposals(const torch::Tensor& prop_embed) {
  auto logits = classifier_(prop_embed.transpose(-1, -2));  // [..., N, K+1]
  return torch::softmax(logits, -1).transpose(-1, -2);
}

torch::Tensor SimFormerModelImpl::compute_masks(const torch::Tensor& prop_embed, const torch::Tensor& pixel_embed) {
  if (prop_embed.size(-2) != pixel_embed.size(-3)) {
    throw std::invalid_argument("compute_masks: embedding dimension mismatch");
  }
  auto x = prop_embed.transpose(-1, -2);  // [B, N, C]
  for (std::size_t i = 0; i < mask_mlp_->size(); ++i) {
    x = mask_mlp_[i]->as<torch::nn::Linear>()->forward(x);
    if (i + 1 < mask_mlp_->size()) x = F::gelu(x);
  }
  auto pix = pixel_embed.flatten(-2);  // [B, C, H*W]
  auto logits = torch::matmul(x, pix);  // [B, N, H*W]
  auto sizes = pixel_embed.sizes().vec();
  sizes[sizes.size() - 3] = x.size(-2);
  return torch::sigmoid(logits).view(sizes);
}

torch::Tensor SimFormerModelImpl::simnet_forward(const torch::Tensor& pair_embeddings) {
  return simnet_->forward(pair_embeddings);
}

}  // namespace simformer
