#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tedge/matrix.hpp"

namespace tedge {

/// Architecture of the Vision Transformer. `mlp_layers` counts the hidden
/// linear layers of width `mlp_size` inside each encoder MLP block; a final
/// linear map projects back to `model_dim`, with GELU between all of them.
struct ViTConfig {
  int n_layers = 1;
  int model_dim = 32;
  int n_heads = 8;
  int mlp_layers = 1;
  int mlp_size = 256;
  int patch_size = 5;
  int image_size = 25;
  int n_classes = 1;

  int head_dim() const noexcept { return model_dim / n_heads; }
  int n_patches() const noexcept {
    const int g = image_size / patch_size;
    return g * g;
  }
  int tokens() const noexcept { return n_patches() + 1; }

  void validate() const;
  friend bool operator==(const ViTConfig&, const ViTConfig&) = default;
};

struct EncoderLayer {
  Tensor ln1_gain, ln1_bias;        // 1 × d
  std::vector<Tensor> qkv;          // per head: d × 3·d_h, columns [Q | K | V]
  Tensor msa;                       // h·d_h × d
  Tensor ln2_gain, ln2_bias;        // 1 × d
  std::vector<Tensor> mlp_weights;  // d×m, (m×m)*, m×d
  std::vector<Tensor> mlp_biases;   // 1×m ..., 1×d
};

/// Every trainable tensor of the model. Gradients and Adam moments use the
/// same type.
struct ViTParams {
  Tensor patch_projection;     // S² × d
  Tensor position_embeddings;  // (N+1) × d
  Tensor class_token;          // 1 × d
  std::vector<EncoderLayer> layers;
  Tensor head_ln_gain, head_ln_bias;  // 1 × d
  Tensor head_weight;                 // d × n_classes
  Tensor head_bias;                   // 1 × n_classes

  /// Visits tensors in declaration order (the checkpoint order).
  void for_each(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::vector<Tensor*> tensors();
  std::size_t parameter_count() const;
};

/// Correctly shaped, all-zero parameter set.
ViTParams zero_params(const ViTConfig& config);

struct ViTModel {
  ViTConfig config;
  ViTParams params;
};

inline constexpr double kInitStd = 0.02;

/// Truncated normal (cut at 2 std) weights, zero biases, unit gains.
ViTModel init_model(const ViTConfig& config, std::uint64_t seed, double stddev = kInitStd);

std::size_t count_params(const ViTConfig& config);

// ---- building blocks -------------------------------------------------------

/// Non-overlapping S×S patches in row-major grid order, each flattened row-major.
Tensor patchify(const Tensor& image, int patch_size);
Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, int patch_size);

/// Z_0 = [x_cls; patches·E] + E_pos.
Tensor embed(const Tensor& patches, const ViTParams& params);

/// softmax(Q·Kᵀ/√d_h)·V with [Q, K, V] = Z·W_qkv.
Tensor self_attention(const Tensor& z, const Tensor& qkv_weight, int head_dim);

/// Heads concatenated along features, then projected by W_msa.
Tensor multi_head_attention(const Tensor& z, const EncoderLayer& layer, int head_dim);

inline constexpr double kLayerNormEps = 1e-6;

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias);
double gelu(double x) noexcept;
double gelu_derivative(double x) noexcept;

Tensor encoder_layer(const Tensor& z, const EncoderLayer& layer, const ViTConfig& config);

// ---- forward / backward ----------------------------------------------------

struct LayerNormCache {
  Tensor normalized;                // x̂
  std::vector<double> inv_std;      // per row
};

struct EncoderCache {
  Tensor input;                     // Z_{l-1}
  LayerNormCache ln1;
  Tensor ln1_out;
  std::vector<Tensor> q, k, v, attn;  // per head
  Tensor concat;                    // N' × h·d_h
  Tensor residual;                  // Z'_l
  LayerNormCache ln2;
  Tensor ln2_out;
  std::vector<Tensor> pre_act;      // per MLP map, before GELU
  std::vector<Tensor> act;          // per MLP input (act[0] = ln2_out)
};

struct ForwardCache {
  Tensor patches;
  std::vector<EncoderCache> layers;
  Tensor final_tokens;              // Z_L
  LayerNormCache head_ln;
  Tensor head_in;                   // LayerNorm(z_L0), 1 × d
  bool valid = false;
};

/// Logits y = LL(LayerNorm(z_L0)). Throws on non-finite activations.
std::vector<double> forward(const Tensor& image, const ViTModel& model, ForwardCache* cache = nullptr);

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits
};

/// Mean binary cross-entropy over classes in log-sum-exp form.
LossResult bce_loss(std::span<const double> logits, std::span<const std::uint8_t> labels);

double sigmoid(double z) noexcept;

/// Accumulates d loss / d parameters into `grads` (which must have the
/// model's shapes, e.g. from zero_params).
void backward(const ViTModel& model, const ForwardCache& cache, std::span<const double> dlogits,
              ViTParams& grads);

// ---- optimizer -------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.001;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long long step = 0;
};

/// Adam with L2-coupled weight decay (g <- g + wd·θ) and bias correction.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state,
               const AdamOptions& options);
void adam_step(ViTParams& params, ViTParams& grads, AdamState& state, const AdamOptions& options);

// ---- checkpoint ------------------------------------------------------------

/// "TEDG", u32 version, 8 × i32 config, then every tensor of ViTParams in
/// declaration order as little-endian float32.
void write_checkpoint(std::ostream& out, const ViTModel& model);
ViTModel read_checkpoint(std::istream& in);

}  // namespace tedge
