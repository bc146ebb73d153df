#include "tedge/vit.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include "binary_io.hpp"
#include "tedge/random.hpp"

namespace tedge {

namespace {

// C (+)= A·B with A m×k, B k×n.
void gemm(Tensor& c, const Tensor& a, const Tensor& b, bool accumulate = false) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (!accumulate) c = Tensor(m, n, 0.0);
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = C + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* bp = B + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C += Aᵀ·B with A m×k, B m×n, C k×n.
void gemm_tn_acc(Tensor& c, const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* bi = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      double* cp = C + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

// C (+)= A·Bᵀ with A m×k, B n×k.
void gemm_nt(Tensor& c, const Tensor& a, const Tensor& b, bool accumulate = false) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (!accumulate) c = Tensor(m, n, 0.0);
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = A + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = B + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      C[i * n + j] += s;
    }
  }
}

void add_row_vector(Tensor& x, const Tensor& row) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) xr[c] += row(0, c);
  }
}

void add_into(Tensor& dst, const Tensor& src) {
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

void column_sums_acc(Tensor& dst, const Tensor& x) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    for (std::size_t c = 0; c < x.cols(); ++c) dst(0, c) += xr[c];
  }
}

Tensor layer_norm_cached(const Tensor& x, const Tensor& gain, const Tensor& bias, LayerNormCache* cache) {
  const std::size_t n = x.cols();
  Tensor y(x.rows(), n);
  if (cache) {
    cache->normalized = Tensor(x.rows(), n);
    cache->inv_std.assign(x.rows(), 0.0);
  }
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto xr = x.row(r);
    double mean = 0.0;
    for (double v : xr) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xr) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < n; ++c) {
      const double xhat = (xr[c] - mean) * inv;
      if (cache) cache->normalized(r, c) = xhat;
      y(r, c) = xhat * gain(0, c) + bias(0, c);
    }
    if (cache) cache->inv_std[r] = inv;
  }
  return y;
}

// Returns dx and accumulates gain/bias gradients.
Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache, const Tensor& gain,
                           Tensor& dgain, Tensor& dbias) {
  const std::size_t n = dy.cols();
  Tensor dx(dy.rows(), n);
  std::vector<double> dxhat(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    double mean_d = 0.0;
    double mean_dx = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double g = dy(r, c);
      const double xhat = cache.normalized(r, c);
      dgain(0, c) += g * xhat;
      dbias(0, c) += g;
      dxhat[c] = g * gain(0, c);
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * xhat;
    }
    mean_d /= static_cast<double>(n);
    mean_dx /= static_cast<double>(n);
    for (std::size_t c = 0; c < n; ++c) {
      dx(r, c) = cache.inv_std[r] * (dxhat[c] - mean_d - cache.normalized(r, c) * mean_dx);
    }
  }
  return dx;
}

void softmax_rows(Tensor& s) {
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto row = s.row(r);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : row) v /= total;
  }
}

// Splits the N' × 3d_h projection into its Q, K and V column blocks.
void split_qkv(const Tensor& qkv, int head_dim, Tensor& q, Tensor& k, Tensor& v) {
  const std::size_t n = qkv.rows();
  const std::size_t dh = static_cast<std::size_t>(head_dim);
  q = Tensor(n, dh);
  k = Tensor(n, dh);
  v = Tensor(n, dh);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < dh; ++c) {
      q(r, c) = qkv(r, c);
      k(r, c) = qkv(r, dh + c);
      v(r, c) = qkv(r, 2 * dh + c);
    }
  }
}

// One attention head; keeps Q, K, V and the attention weights when asked.
Tensor attention_head(const Tensor& z, const Tensor& w, int head_dim, Tensor* q_out, Tensor* k_out,
                      Tensor* v_out, Tensor* attn_out) {
  Tensor qkv;
  gemm(qkv, z, w);
  Tensor q, k, v;
  split_qkv(qkv, head_dim, q, k, v);
  Tensor scores;
  gemm_nt(scores, q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  for (auto& s : scores.values()) s *= scale;
  softmax_rows(scores);
  Tensor out;
  gemm(out, scores, v);
  if (q_out) *q_out = std::move(q);
  if (k_out) *k_out = std::move(k);
  if (v_out) *v_out = std::move(v);
  if (attn_out) *attn_out = std::move(scores);
  return out;
}

void check_finite(const Tensor& t, const char* where) {
  for (double v : t.values()) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite activation in ") + where);
  }
}

Tensor encoder_forward(const Tensor& z, const EncoderLayer& layer, const ViTConfig& config,
                       EncoderCache* cache) {
  const int dh = config.head_dim();
  const std::size_t tokens = z.rows();
  LayerNormCache ln1;
  Tensor y1 = layer_norm_cached(z, layer.ln1_gain, layer.ln1_bias, cache ? &ln1 : nullptr);

  Tensor concat(tokens, static_cast<std::size_t>(config.n_heads * dh), 0.0);
  if (cache) {
    cache->q.resize(config.n_heads);
    cache->k.resize(config.n_heads);
    cache->v.resize(config.n_heads);
    cache->attn.resize(config.n_heads);
  }
  for (int h = 0; h < config.n_heads; ++h) {
    Tensor head = attention_head(y1, layer.qkv[h], dh, cache ? &cache->q[h] : nullptr,
                                 cache ? &cache->k[h] : nullptr, cache ? &cache->v[h] : nullptr,
                                 cache ? &cache->attn[h] : nullptr);
    for (std::size_t r = 0; r < tokens; ++r) {
      for (int c = 0; c < dh; ++c) concat(r, static_cast<std::size_t>(h * dh + c)) = head(r, c);
    }
  }
  Tensor residual;
  gemm(residual, concat, layer.msa);
  add_into(residual, z);

  LayerNormCache ln2;
  Tensor y2 = layer_norm_cached(residual, layer.ln2_gain, layer.ln2_bias, cache ? &ln2 : nullptr);
  const std::size_t maps = layer.mlp_weights.size();
  std::vector<Tensor> pre(maps);
  std::vector<Tensor> act(maps);
  act[0] = y2;
  Tensor out;
  for (std::size_t m = 0; m < maps; ++m) {
    gemm(pre[m], act[m], layer.mlp_weights[m]);
    add_row_vector(pre[m], layer.mlp_biases[m]);
    if (m + 1 < maps) {
      act[m + 1] = Tensor(pre[m].rows(), pre[m].cols());
      for (std::size_t i = 0; i < pre[m].size(); ++i) act[m + 1].values()[i] = gelu(pre[m].values()[i]);
    }
  }
  out = pre[maps - 1];
  add_into(out, residual);

  if (cache) {
    cache->input = z;
    cache->ln1 = std::move(ln1);
    cache->ln1_out = std::move(y1);
    cache->concat = std::move(concat);
    cache->residual = std::move(residual);
    cache->ln2 = std::move(ln2);
    cache->ln2_out = act[0];
    cache->pre_act = std::move(pre);
    cache->act = std::move(act);
  }
  return out;
}

Tensor truncated_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Tensor t(rows, cols);
  for (auto& v : t.values()) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    v = stddev * z;
  }
  return t;
}

}  // namespace

void ViTConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("ViTConfig: " + msg); };
  if (n_layers < 1) fail("n_layers must be >= 1");
  if (model_dim < 1 || n_heads < 1) fail("model_dim and n_heads must be >= 1");
  if (model_dim % n_heads != 0) {
    fail("model_dim " + std::to_string(model_dim) + " is not divisible by n_heads " +
         std::to_string(n_heads) + " (head dim d/h must be an integer)");
  }
  if (mlp_layers < 1 || mlp_size < 1) fail("mlp_layers and mlp_size must be >= 1");
  if (patch_size < 1 || image_size < 1) fail("patch_size and image_size must be >= 1");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
         std::to_string(patch_size));
  }
  if (n_classes < 1) fail("n_classes must be >= 1");
}

void ViTParams::for_each(const std::function<void(const std::string&, Tensor&)>& fn) {
  fn("patch_projection", patch_projection);
  fn("position_embeddings", position_embeddings);
  fn("class_token", class_token);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& layer = layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "ln1_gain", layer.ln1_gain);
    fn(p + "ln1_bias", layer.ln1_bias);
    for (std::size_t h = 0; h < layer.qkv.size(); ++h) fn(p + "qkv." + std::to_string(h), layer.qkv[h]);
    fn(p + "msa", layer.msa);
    fn(p + "ln2_gain", layer.ln2_gain);
    fn(p + "ln2_bias", layer.ln2_bias);
    for (std::size_t m = 0; m < layer.mlp_weights.size(); ++m) {
      fn(p + "mlp_weight." + std::to_string(m), layer.mlp_weights[m]);
      fn(p + "mlp_bias." + std::to_string(m), layer.mlp_biases[m]);
    }
  }
  fn("head_ln_gain", head_ln_gain);
  fn("head_ln_bias", head_ln_bias);
  fn("head_weight", head_weight);
  fn("head_bias", head_bias);
}

void ViTParams::for_each(const std::function<void(const std::string&, const Tensor&)>& fn) const {
  const_cast<ViTParams*>(this)->for_each(
      [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
}

std::vector<Tensor*> ViTParams::tensors() {
  std::vector<Tensor*> out;
  for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

std::size_t ViTParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

ViTParams zero_params(const ViTConfig& config) {
  config.validate();
  const auto d = static_cast<std::size_t>(config.model_dim);
  const auto dh = static_cast<std::size_t>(config.head_dim());
  const auto s2 = static_cast<std::size_t>(config.patch_size * config.patch_size);
  const auto m = static_cast<std::size_t>(config.mlp_size);
  ViTParams p;
  p.patch_projection = Tensor(s2, d);
  p.position_embeddings = Tensor(static_cast<std::size_t>(config.tokens()), d);
  p.class_token = Tensor(1, d);
  for (int l = 0; l < config.n_layers; ++l) {
    EncoderLayer layer;
    layer.ln1_gain = Tensor(1, d);
    layer.ln1_bias = Tensor(1, d);
    for (int h = 0; h < config.n_heads; ++h) layer.qkv.emplace_back(d, 3 * dh);
    layer.msa = Tensor(static_cast<std::size_t>(config.n_heads) * dh, d);
    layer.ln2_gain = Tensor(1, d);
    layer.ln2_bias = Tensor(1, d);
    std::size_t in = d;
    for (int i = 0; i < config.mlp_layers; ++i) {
      layer.mlp_weights.emplace_back(in, m);
      layer.mlp_biases.emplace_back(1, m);
      in = m;
    }
    layer.mlp_weights.emplace_back(in, d);
    layer.mlp_biases.emplace_back(1, d);
    p.layers.push_back(std::move(layer));
  }
  p.head_ln_gain = Tensor(1, d);
  p.head_ln_bias = Tensor(1, d);
  p.head_weight = Tensor(d, static_cast<std::size_t>(config.n_classes));
  p.head_bias = Tensor(1, static_cast<std::size_t>(config.n_classes));
  return p;
}

ViTModel init_model(const ViTConfig& config, std::uint64_t seed, double stddev) {
  ViTModel model{config, zero_params(config)};
  Rng rng(seed);
  auto& p = model.params;
  auto fill = [&](Tensor& t) { t = truncated_normal(t.rows(), t.cols(), stddev, rng); };
  fill(p.patch_projection);
  fill(p.position_embeddings);
  fill(p.class_token);
  for (auto& layer : p.layers) {
    layer.ln1_gain.fill(1.0);
    for (auto& w : layer.qkv) fill(w);
    fill(layer.msa);
    layer.ln2_gain.fill(1.0);
    for (auto& w : layer.mlp_weights) fill(w);
  }
  p.head_ln_gain.fill(1.0);
  fill(p.head_weight);
  return model;
}

std::size_t count_params(const ViTConfig& config) {
  config.validate();
  const std::size_t d = config.model_dim;
  const std::size_t s2 = static_cast<std::size_t>(config.patch_size) * config.patch_size;
  const std::size_t m = config.mlp_size;
  const std::size_t tokens = config.tokens();
  std::size_t per_layer = 2 * d                                   // ln1
                          + 3 * d * d                              // h heads × d × 3d_h
                          + d * d                                  // W_msa
                          + 2 * d                                  // ln2
                          + (d * m + m)                            // first hidden map
                          + (config.mlp_layers - 1) * (m * m + m)  // further hidden maps
                          + (m * d + d);                           // projection back to d
  return s2 * d + tokens * d + d + config.n_layers * per_layer + 2 * d +
         d * static_cast<std::size_t>(config.n_classes) + static_cast<std::size_t>(config.n_classes);
}

Tensor patchify(const Tensor& image, int patch_size) {
  const std::size_t S = static_cast<std::size_t>(patch_size);
  if (patch_size < 1 || image.rows() % S != 0 || image.cols() % S != 0) {
    throw std::invalid_argument("patchify: image " + std::to_string(image.rows()) + "x" +
                                std::to_string(image.cols()) + " is not divisible into " +
                                std::to_string(patch_size) + "x" + std::to_string(patch_size) + " patches");
  }
  const std::size_t gr = image.rows() / S, gc = image.cols() / S;
  Tensor patches(gr * gc, S * S);
  for (std::size_t pr = 0; pr < gr; ++pr) {
    for (std::size_t pc = 0; pc < gc; ++pc) {
      auto dst = patches.row(pr * gc + pc);
      for (std::size_t i = 0; i < S; ++i) {
        for (std::size_t j = 0; j < S; ++j) dst[i * S + j] = image(pr * S + i, pc * S + j);
      }
    }
  }
  return patches;
}

Tensor unpatchify(const Tensor& patches, std::size_t height, std::size_t width, int patch_size) {
  const std::size_t S = static_cast<std::size_t>(patch_size);
  const std::size_t gc = width / S;
  if (patches.rows() != (height / S) * gc || patches.cols() != S * S) {
    throw std::invalid_argument("unpatchify: patch matrix does not match the image geometry");
  }
  Tensor image(height, width);
  for (std::size_t p = 0; p < patches.rows(); ++p) {
    const std::size_t pr = p / gc, pc = p % gc;
    for (std::size_t i = 0; i < S; ++i) {
      for (std::size_t j = 0; j < S; ++j) image(pr * S + i, pc * S + j) = patches(p, i * S + j);
    }
  }
  return image;
}

Tensor embed(const Tensor& patches, const ViTParams& params) {
  const std::size_t d = params.patch_projection.cols();
  if (patches.cols() != params.patch_projection.rows() ||
      patches.rows() + 1 != params.position_embeddings.rows() || params.class_token.cols() != d) {
    throw std::invalid_argument("embed: patch matrix " + std::to_string(patches.rows()) + "x" +
                                std::to_string(patches.cols()) + " does not match the model");
  }
  Tensor projected;
  gemm(projected, patches, params.patch_projection);
  Tensor z(patches.rows() + 1, d);
  for (std::size_t c = 0; c < d; ++c) z(0, c) = params.class_token(0, c) + params.position_embeddings(0, c);
  for (std::size_t r = 0; r < patches.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) z(r + 1, c) = projected(r, c) + params.position_embeddings(r + 1, c);
  }
  return z;
}

Tensor self_attention(const Tensor& z, const Tensor& qkv_weight, int head_dim) {
  if (qkv_weight.rows() != z.cols() || qkv_weight.cols() != 3 * static_cast<std::size_t>(head_dim)) {
    throw std::invalid_argument("self_attention: W_qkv shape does not match input and head dim");
  }
  return attention_head(z, qkv_weight, head_dim, nullptr, nullptr, nullptr, nullptr);
}

Tensor multi_head_attention(const Tensor& z, const EncoderLayer& layer, int head_dim) {
  const std::size_t dh = static_cast<std::size_t>(head_dim);
  Tensor concat(z.rows(), layer.qkv.size() * dh);
  for (std::size_t h = 0; h < layer.qkv.size(); ++h) {
    const Tensor head = self_attention(z, layer.qkv[h], head_dim);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t c = 0; c < dh; ++c) concat(r, h * dh + c) = head(r, c);
    }
  }
  Tensor out;
  gemm(out, concat, layer.msa);
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return layer_norm_cached(x, gain, bias, nullptr);
}

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Tensor encoder_layer(const Tensor& z, const EncoderLayer& layer, const ViTConfig& config) {
  return encoder_forward(z, layer, config, nullptr);
}

std::vector<double> forward(const Tensor& image, const ViTModel& model, ForwardCache* cache) {
  const auto& config = model.config;
  const auto& p = model.params;
  if (image.rows() != static_cast<std::size_t>(config.image_size) ||
      image.cols() != static_cast<std::size_t>(config.image_size)) {
    throw std::invalid_argument("forward: expected a " + std::to_string(config.image_size) + "x" +
                                std::to_string(config.image_size) + " image, got " +
                                std::to_string(image.rows()) + "x" + std::to_string(image.cols()));
  }
  Tensor patches = patchify(image, config.patch_size);
  Tensor z = embed(patches, p);
  if (cache) {
    cache->valid = false;
    cache->layers.resize(p.layers.size());
  }
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    z = encoder_forward(z, p.layers[l], config, cache ? &cache->layers[l] : nullptr);
    check_finite(z, "encoder layer");
  }
  Tensor cls(1, z.cols());
  for (std::size_t c = 0; c < z.cols(); ++c) cls(0, c) = z(0, c);
  LayerNormCache head_ln;
  Tensor head_in = layer_norm_cached(cls, p.head_ln_gain, p.head_ln_bias, cache ? &head_ln : nullptr);
  Tensor logits;
  gemm(logits, head_in, p.head_weight);
  add_row_vector(logits, p.head_bias);
  check_finite(logits, "classifier head");
  if (cache) {
    cache->patches = std::move(patches);
    cache->final_tokens = std::move(z);
    cache->head_ln = std::move(head_ln);
    cache->head_in = std::move(head_in);
    cache->valid = true;
  }
  return logits.values();
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

LossResult bce_loss(std::span<const double> logits, std::span<const std::uint8_t> labels) {
  if (logits.size() != labels.size() || logits.empty()) {
    throw std::invalid_argument("bce_loss: logits and labels must have the same non-zero length");
  }
  const double n = static_cast<double>(logits.size());
  LossResult out;
  out.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    const double y = labels[i] ? 1.0 : 0.0;
    out.loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    out.grad[i] = (sigmoid(z) - y) / n;
  }
  out.loss /= n;
  return out;
}

void backward(const ViTModel& model, const ForwardCache& cache, std::span<const double> dlogits,
              ViTParams& grads) {
  if (!cache.valid) throw std::logic_error("backward: no forward cache (run forward with a cache first)");
  const auto& config = model.config;
  const auto& p = model.params;
  if (dlogits.size() != static_cast<std::size_t>(config.n_classes)) {
    throw std::invalid_argument("backward: gradient length does not match n_classes");
  }
  const std::size_t d = static_cast<std::size_t>(config.model_dim);
  const std::size_t dh = static_cast<std::size_t>(config.head_dim());
  const std::size_t tokens = cache.final_tokens.rows();

  // Classifier head.
  Tensor dy(1, dlogits.size(), std::vector<double>(dlogits.begin(), dlogits.end()));
  gemm_tn_acc(grads.head_weight, cache.head_in, dy);
  column_sums_acc(grads.head_bias, dy);
  Tensor dhead_in;
  gemm_nt(dhead_in, dy, p.head_weight);
  Tensor dcls = layer_norm_backward(dhead_in, cache.head_ln, p.head_ln_gain, grads.head_ln_gain, grads.head_ln_bias);

  Tensor dz(tokens, d, 0.0);
  for (std::size_t c = 0; c < d; ++c) dz(0, c) = dcls(0, c);

  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& layer = p.layers[li];
    const auto& lc = cache.layers[li];
    auto& g = grads.layers[li];

    // MLP block: Z_l = MLP(LN2(Z')) + Z'.
    Tensor dresidual = dz;
    Tensor dact = dz;
    for (std::size_t m = layer.mlp_weights.size(); m-- > 0;) {
      Tensor dpre = std::move(dact);
      if (m + 1 < layer.mlp_weights.size()) {
        const auto& pre = lc.pre_act[m];
        for (std::size_t i = 0; i < dpre.size(); ++i) dpre.values()[i] *= gelu_derivative(pre.values()[i]);
      }
      gemm_tn_acc(g.mlp_weights[m], lc.act[m], dpre);
      column_sums_acc(g.mlp_biases[m], dpre);
      gemm_nt(dact, dpre, layer.mlp_weights[m]);
    }
    add_into(dresidual, layer_norm_backward(dact, lc.ln2, layer.ln2_gain, g.ln2_gain, g.ln2_bias));

    // Attention block: Z' = MSA(LN1(Z)) + Z.
    Tensor dinput = dresidual;
    gemm_tn_acc(g.msa, lc.concat, dresidual);
    Tensor dconcat;
    gemm_nt(dconcat, dresidual, layer.msa);

    Tensor dln1(tokens, d, 0.0);
    for (std::size_t h = 0; h < layer.qkv.size(); ++h) {
      const Tensor& a = lc.attn[h];
      Tensor dout(tokens, dh);
      for (std::size_t r = 0; r < tokens; ++r) {
        for (std::size_t c = 0; c < dh; ++c) dout(r, c) = dconcat(r, h * dh + c);
      }
      Tensor dv(tokens, dh, 0.0);
      gemm_tn_acc(dv, a, dout);
      Tensor da;
      gemm_nt(da, dout, lc.v[h]);
      // Softmax backward, folded with the 1/√d_h score scale.
      Tensor ds(tokens, tokens);
      for (std::size_t r = 0; r < tokens; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < tokens; ++c) dot += da(r, c) * a(r, c);
        for (std::size_t c = 0; c < tokens; ++c) ds(r, c) = a(r, c) * (da(r, c) - dot) * scale;
      }
      Tensor dq;
      gemm(dq, ds, lc.k[h]);
      Tensor dk(tokens, dh, 0.0);
      gemm_tn_acc(dk, ds, lc.q[h]);

      Tensor dqkv(tokens, 3 * dh);
      for (std::size_t r = 0; r < tokens; ++r) {
        for (std::size_t c = 0; c < dh; ++c) {
          dqkv(r, c) = dq(r, c);
          dqkv(r, dh + c) = dk(r, c);
          dqkv(r, 2 * dh + c) = dv(r, c);
        }
      }
      gemm_tn_acc(g.qkv[h], lc.ln1_out, dqkv);
      gemm_nt(dln1, dqkv, layer.qkv[h], /*accumulate=*/true);
    }
    add_into(dinput, layer_norm_backward(dln1, lc.ln1, layer.ln1_gain, g.ln1_gain, g.ln1_bias));
    dz = std::move(dinput);
  }

  // Embedding: Z_0 = [x_cls; patches·E] + E_pos.
  add_into(grads.position_embeddings, dz);
  for (std::size_t c = 0; c < d; ++c) grads.class_token(0, c) += dz(0, c);
  Tensor dpatch_rows(tokens - 1, d);
  for (std::size_t r = 1; r < tokens; ++r) {
    for (std::size_t c = 0; c < d; ++c) dpatch_rows(r - 1, c) = dz(r, c);
  }
  gemm_tn_acc(grads.patch_projection, cache.patches, dpatch_rows);
}

void adam_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, AdamState& state,
               const AdamOptions& options) {
  if (params.size() != grads.size()) throw std::invalid_argument("adam_step: params/grads count mismatch");
  if (state.m.empty()) {
    for (const Tensor* t : params) {
      state.m.emplace_back(t->rows(), t->cols(), 0.0);
      state.v.emplace_back(t->rows(), t->cols(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: optimizer state mismatch");
  ++state.step;
  const double bc1 = 1.0 - std::pow(options.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(options.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& theta = *params[i];
    const Tensor& g = *grads[i];
    if (!theta.same_shape(g) || !theta.same_shape(state.m[i])) {
      throw std::invalid_argument("adam_step: shape mismatch in tensor " + std::to_string(i));
    }
    double* th = theta.data();
    const double* gr = g.data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double grad = gr[j] + options.weight_decay * th[j];
      m[j] = options.beta1 * m[j] + (1.0 - options.beta1) * grad;
      v[j] = options.beta2 * v[j] + (1.0 - options.beta2) * grad * grad;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      th[j] -= options.lr * mhat / (std::sqrt(vhat) + options.eps);
    }
  }
}

void adam_step(ViTParams& params, ViTParams& grads, AdamState& state, const AdamOptions& options) {
  const auto p = params.tensors();
  const auto g = grads.tensors();
  std::vector<const Tensor*> gc(g.begin(), g.end());
  adam_step(std::span<Tensor* const>(p), std::span<const Tensor* const>(gc), state, options);
}

namespace {
constexpr std::uint32_t kCheckpointVersion = 1;
}

void write_checkpoint(std::ostream& out, const ViTModel& model) {
  const auto& c = model.config;
  io::put_magic(out, "TEDG");
  io::put<std::uint32_t>(out, kCheckpointVersion);
  for (int v : {c.n_layers, c.model_dim, c.n_heads, c.mlp_layers, c.mlp_size, c.patch_size, c.image_size,
                c.n_classes}) {
    io::put<std::int32_t>(out, v);
  }
  model.params.for_each([&](const std::string&, const Tensor& t) {
    for (double v : t.values()) io::put<float>(out, static_cast<float>(v));
  });
  if (!out) throw std::runtime_error("write_checkpoint: write failed");
}

ViTModel read_checkpoint(std::istream& in) {
  io::expect_magic(in, "TEDG");
  const auto version = io::get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw std::runtime_error("read_checkpoint: unsupported version " + std::to_string(version));
  }
  ViTConfig c;
  for (int* v : {&c.n_layers, &c.model_dim, &c.n_heads, &c.mlp_layers, &c.mlp_size, &c.patch_size,
                 &c.image_size, &c.n_classes}) {
    *v = io::get<std::int32_t>(in, "config");
  }
  ViTModel model{c, zero_params(c)};
  model.params.for_each([&](const std::string& name, Tensor& t) {
    for (auto& v : t.values()) v = static_cast<double>(io::get<float>(in, name.c_str()));
  });
  return model;
}

}  // namespace tedge
