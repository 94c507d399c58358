#pragma once

#include <torch/torch.h>

#include <vector>

#include "json.hpp"

namespace simformer {

struct ModelConfig {
  int embed_dim = 32;      // C
  int num_queries = 12;    // N
  int num_classes = 12;    // K (semantic classes; one extra no-object row)
  int height = 64;
  int width = 64;
  std::vector<int> backbone_channels{16, 32, 32};
  int decoder_layers = 2;
  int num_heads = 4;
  int ffn_dim = 64;
  int mask_head_layers = 3;
  int simnet_hidden = 64;
  int simnet_layers = 6;

  /// Total downsampling of the backbone; input sides must be multiples of it.
  static constexpr int kStride = 4;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Per-batch model outputs. Layouts follow the column conventions of the
/// method: proposals are columns, class rows are (K+1).
///   prop_embed  [B, C, N]
///   pixel_embed [B, C, H, W]
///   class_probs [B, K+1, N]   (last row = no-object)
///   mask_probs  [B, N, H, W]
struct ModelOutputs {
  torch::Tensor prop_embed;
  torch::Tensor pixel_embed;
  torch::Tensor class_probs;
  torch::Tensor mask_probs;

  int batch() const { return static_cast<int>(class_probs.size(0)); }
  /// Slice of image b with the batch dimension dropped.
  ModelOutputs image(int b) const;
};

struct ConvStageImpl : torch::nn::Module {
  ConvStageImpl(int in, int out, int stride);
  torch::Tensor forward(const torch::Tensor& x);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(ConvStage);

struct AttentionImpl : torch::nn::Module {
  AttentionImpl(int dim, int heads);
  // query [B, Nq, C], key/value [B, Nk, C]
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& key, const torch::Tensor& value);
  int heads;
  torch::nn::Linear q_proj{nullptr}, k_proj{nullptr}, v_proj{nullptr}, out_proj{nullptr};
};
TORCH_MODULE(Attention);

/// Post-norm decoder layer: self-attention, cross-attention to image tokens, FFN.
struct DecoderLayerImpl : torch::nn::Module {
  DecoderLayerImpl(int dim, int heads, int ffn_dim);
  torch::Tensor forward(const torch::Tensor& queries, const torch::Tensor& memory, const torch::Tensor& memory_pos);
  Attention self_attn{nullptr}, cross_attn{nullptr};
  torch::nn::Linear ffn1{nullptr}, ffn2{nullptr};
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr}, norm3{nullptr};
};
TORCH_MODULE(DecoderLayer);

/// Fully connected pixel-pair similarity scorer over concatenated embeddings.
struct SimNetImpl : torch::nn::Module {
  SimNetImpl(int embed_dim, int hidden, int layers);
  /// pair_embeddings [2C, P] -> scores [P] in (0,1).
  torch::Tensor forward(const torch::Tensor& pair_embeddings);
  /// Scores of all J_a × J_b ordered pairs from two sets of pixel embeddings
  /// ([J_a, C] and [J_b, C]); identical to forward() on the concatenated
  /// pairs but splits the first layer so the 2C×J×J grid is never formed.
  torch::Tensor score_grid(const torch::Tensor& first, const torch::Tensor& second);
  torch::Tensor logits_from_hidden(torch::Tensor h);

  int embed_dim;
  torch::nn::ModuleList fcs;
};
TORCH_MODULE(SimNet);

class SimFormerModelImpl : public torch::nn::Module {
 public:
  explicit SimFormerModelImpl(ModelConfig config);

  /// images [B, 3, H, W] in [0,1].
  ModelOutputs forward(const torch::Tensor& images);

  /// One linear layer + softmax. prop_embed [B, C, N] -> [B, K+1, N].
  torch::Tensor classify_proposals(const torch::Tensor& prop_embed);
  /// sigmoid(<mask_mlp(E_prop[:, i]), E_pix[:, h, w]>). -> [B, N, H, W].
  torch::Tensor compute_masks(const torch::Tensor& prop_embed, const torch::Tensor& pixel_embed);
  /// pair_embeddings [2C, P] -> [P].
  torch::Tensor simnet_forward(const torch::Tensor& pair_embeddings);

  const ModelConfig& config() const { return config_; }
  SimNet& simnet() { return simnet_; }
  /// Query embeddings Q as a [C, N] parameter.
  torch::Tensor& queries() { return queries_; }
  torch::nn::Linear& classifier() { return classifier_; }

 private:
  torch::Tensor pixel_decoder(const torch::Tensor& images, const torch::Tensor& f1, const torch::Tensor& f3);
  torch::Tensor memory_positions(int h, int w, const torch::TensorOptions& opts);

  ModelConfig config_;
  ConvStage stage1_{nullptr}, stage2_{nullptr}, stage3_{nullptr};
  torch::nn::Conv2d dec_lateral_{nullptr}, dec_mid_{nullptr}, dec_fine_{nullptr}, dec_out_{nullptr};
  torch::nn::Linear memory_proj_{nullptr}, pos_fc1_{nullptr}, pos_fc2_{nullptr};
  torch::Tensor queries_;
  torch::nn::ModuleList decoder_;
  torch::nn::LayerNorm decoder_norm_{nullptr};
  torch::nn::Linear classifier_{nullptr};
  torch::nn::ModuleList mask_mlp_;
  SimNet simnet_{nullptr};
};
TORCH_MODULE(SimFormerModel);

}  // namespace simformer
