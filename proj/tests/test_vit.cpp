#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"
#include "tedge/random.hpp"
#include "tedge/vit.hpp"

using namespace tedge;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
  return m;
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Tensor t(r, c);
  for (auto& v : t.values()) v = scale * rng.normal();
  return t;
}

ViTConfig three_token_config(int d, int h) {
  ViTConfig c;
  c.model_dim = d;
  c.n_heads = h;
  c.patch_size = 2;
  c.image_size = 2;  // one patch plus the class token would be 2 tokens
  c.mlp_size = 8;
  return c;
}

}  // namespace

TEST_CASE("patchify geometry and round trip") {
  Rng rng(1);
  const Tensor img = random_tensor(25, 25, rng);
  const Tensor p = patchify(img, 5);
  CHECK(p.rows() == 25);
  CHECK(p.cols() == 25);
  CHECK(p(1, 0) == img(0, 5));
  CHECK(p(5, 6) == img(6, 1));
  CHECK(unpatchify(p, 25, 25, 5) == img);
  const Tensor whole = patchify(img, 25);
  CHECK(whole.rows() == 1);
  CHECK(whole.values() == img.values());
  CHECK_THROWS(patchify(img, 4));
}

TEST_CASE("embed examples") {
  ViTConfig c = three_token_config(4, 2);
  c.patch_size = 2;
  c.image_size = 4;
  ViTParams p = zero_params(c);
  Rng rng(2);
  p.position_embeddings = random_tensor(5, 4, rng);
  CHECK(embed(Tensor(4, 4, 0.0), p) == p.position_embeddings);

  ViTParams q = zero_params(c);
  for (std::size_t i = 0; i < 4; ++i) q.patch_projection(i, i) = 1.0;
  Tensor one(4, 4, 0.0);
  one(0, 0) = 0.5;
  one(0, 1) = -2.0;
  one(0, 3) = 7.0;
  const Tensor z = embed(one, q);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z(1, i) == one(0, i));
  CHECK_THROWS(embed(Tensor(4, 3, 0.0), q));
}

TEST_CASE("forward building blocks match loop oracles on 3-token cases over 200 seeds") {
  double worst_embed = 0.0, worst_sa = 0.0, worst_mha = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const int h = 1 + static_cast<int>(rng.below(3));
    const int dh = 1 + static_cast<int>(rng.below(4));
    const int d = h * dh;
    const int s2 = 1 + static_cast<int>(rng.below(6));
    ViTParams p;
    p.patch_projection = random_tensor(static_cast<std::size_t>(s2), static_cast<std::size_t>(d), rng);
    p.position_embeddings = random_tensor(3, static_cast<std::size_t>(d), rng);
    p.class_token = random_tensor(1, static_cast<std::size_t>(d), rng);
    const Tensor patches = random_tensor(2, static_cast<std::size_t>(s2), rng);
    worst_embed = std::max(worst_embed, max_abs_diff(embed(patches, p), oracle::embed(patches, p)));

    const Tensor z = random_tensor(3, static_cast<std::size_t>(d), rng);
    EncoderLayer layer;
    for (int i = 0; i < h; ++i) layer.qkv.push_back(random_tensor(static_cast<std::size_t>(d), static_cast<std::size_t>(3 * dh), rng));
    layer.msa = random_tensor(static_cast<std::size_t>(d), static_cast<std::size_t>(d), rng);
    worst_sa = std::max(worst_sa, max_abs_diff(self_attention(z, layer.qkv[0], dh), oracle::self_attention(z, layer.qkv[0], dh)));
    worst_mha = std::max(worst_mha, max_abs_diff(multi_head_attention(z, layer, dh), oracle::multi_head_attention(z, layer, dh)));
  }
  CHECK(worst_embed < 1e-12);
  CHECK(worst_sa < 1e-12);
  CHECK(worst_mha < 1e-12);
}

TEST_CASE("self-attention special cases") {
  Rng rng(4);
  const Tensor z1 = random_tensor(1, 4, rng);
  const Tensor w = random_tensor(4, 6, rng);
  const Tensor out = self_attention(z1, w, 2);
  const Tensor qkv = oracle::matmul(z1, w);
  CHECK(out(0, 0) == doctest::Approx(qkv(0, 4)));
  CHECK(out(0, 1) == doctest::Approx(qkv(0, 5)));

  Tensor wk = random_tensor(4, 6, rng);
  for (std::size_t r = 0; r < 4; ++r) wk(r, 2) = wk(r, 3) = 0.0;  // K = 0
  const Tensor z = random_tensor(5, 4, rng);
  const Tensor o = self_attention(z, wk, 2);
  const Tensor v = oracle::matmul(z, wk);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (std::size_t r = 0; r < 5; ++r) mean += v(r, 4 + c) / 5.0;
    for (std::size_t r = 0; r < 5; ++r) CHECK(o(r, c) == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("one head with identity projection is plain self-attention") {
  Rng rng(5);
  const Tensor z = random_tensor(4, 3, rng);
  EncoderLayer layer;
  layer.qkv = {random_tensor(3, 9, rng)};
  layer.msa = Tensor(3, 3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) layer.msa(i, i) = 1.0;
  CHECK(max_abs_diff(multi_head_attention(z, layer, 3), self_attention(z, layer.qkv[0], 3)) < 1e-15);
}

TEST_CASE("layer norm, gelu and the residual identity") {
  Tensor row(1, 5, 3.25);
  Tensor g(1, 5, 1.0), b(1, 5, 0.0);
  const Tensor normalized = layer_norm(row, g, b);
  for (double v : normalized.values()) CHECK(v == 0.0);
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu(12.0) == doctest::Approx(12.0).epsilon(1e-15));
  CHECK(std::abs(gelu(-12.0)) < 1e-15);
  for (double x : {-2.0, -0.3, 0.0, 0.7, 3.0}) {
    const double fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
    CHECK(gelu_derivative(x) == doctest::Approx(fd).epsilon(1e-7));
  }

  const ViTConfig c = gradcheck::tiny_config();
  ViTParams zero = zero_params(c);
  Rng rng(6);
  const Tensor z = random_tensor(static_cast<std::size_t>(c.tokens()), static_cast<std::size_t>(c.model_dim), rng);
  CHECK(encoder_layer(z, zero.layers[0], c) == z);
}

TEST_CASE("softmax rows of the attention cache are distributions") {
  const auto m = gradcheck::random_model(gradcheck::tiny_config(), 8, 1.0);
  Rng rng(8);
  ForwardCache cache;
  forward(gradcheck::random_image(10, rng), m, &cache);
  for (const auto& a : cache.layers[0].attn) {
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double s = 0.0;
      for (double v : a.row(r)) {
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("forward: zero model, shape, straight-line oracle") {
  const ViTConfig c = gradcheck::tiny_config();
  ViTModel zero{c, zero_params(c)};
  zero.params.head_bias(0, 0) = 0.3;
  zero.params.head_bias(0, 2) = -1.0;
  Rng rng(10);
  const auto img = gradcheck::random_image(10, rng);
  const auto logits = forward(img, zero);
  CHECK(logits == std::vector<double>{0.3, 0.0, -1.0});

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = gradcheck::random_model(c, seed);
    Rng r(seed + 100);
    const auto x = gradcheck::random_image(10, r);
    const auto a = forward(x, m);
    const auto b = oracle::forward(x, m);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(a[i] - b[i]) < 1e-10);
  }
}

TEST_CASE("forward fails fast on non-finite input") {
  const auto m = gradcheck::random_model(gradcheck::tiny_config(), 1);
  Tensor img(10, 10, 0.0);
  img(3, 3) = std::nan("");
  CHECK_THROWS(forward(img, m));
}

TEST_CASE("patch order does not matter without position embeddings") {
  ViTConfig c = gradcheck::tiny_config();
  auto m = gradcheck::random_model(c, 21);
  m.params.position_embeddings.fill(0.0);
  Rng rng(21);
  const Tensor img = gradcheck::random_image(10, rng);
  const Tensor p = patchify(img, 5);
  Tensor swapped = p;
  for (std::size_t c2 = 0; c2 < p.cols(); ++c2) {
    swapped(0, c2) = p(3, c2);
    swapped(3, c2) = p(0, c2);
    swapped(1, c2) = p(2, c2);
    swapped(2, c2) = p(1, c2);
  }
  const auto a = forward(img, m);
  const auto b = forward(unpatchify(swapped, 10, 10, 5), m);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-10);
}

TEST_CASE("binary cross-entropy") {
  const std::vector<double> zeros{0.0, 0.0, 0.0};
  const std::vector<std::uint8_t> y{1, 0, 1};
  CHECK(bce_loss(zeros, y).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> big{800.0};
  const std::vector<std::uint8_t> one{1};
  CHECK(bce_loss(big, one).loss < 1e-300);
  const std::vector<double> neg{-800.0};
  CHECK(std::isfinite(bce_loss(neg, one).loss));

  Rng rng(30);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(1 + rng.below(6));
    std::vector<std::uint8_t> lab(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
      z[i] = rng.uniform(-6, 6);
      lab[i] = rng.uniform() < 0.5;
    }
    const auto r = bce_loss(z, lab);
    CHECK(r.loss >= 0.0);
    CHECK(r.loss == doctest::Approx(oracle::bce(z, lab)).epsilon(1e-12));
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto up = z, down = z;
      up[i] += 1e-6;
      down[i] -= 1e-6;
      const double fd = (bce_loss(up, lab).loss - bce_loss(down, lab).loss) / 2e-6;
      CHECK(std::abs(r.grad[i] - fd) <= 1e-6 * std::max(std::abs(fd), 1e-3));
    }
  }
}

TEST_CASE("every parameter gradient matches central differences on the tiny config") {
  const ViTConfig c = gradcheck::tiny_config();
  for (std::uint64_t seed : {1u, 2u}) {
    const auto m = gradcheck::random_model(c, seed);
    Rng rng(seed);
    const auto img = gradcheck::random_image(10, rng);
    for (const auto& e : gradcheck::check(m, img, {1, 0, 1})) {
      INFO(e.name);
      CHECK(e.max_relative_error < 1e-4);
      CHECK(e.max_abs_gradient > 0.0);
    }
  }
}

TEST_CASE("gradients through deeper MLP and two layers") {
  ViTConfig c = gradcheck::tiny_config();
  c.n_layers = 2;
  c.mlp_layers = 3;
  c.mlp_size = 6;
  const auto m = gradcheck::random_model(c, 3);
  Rng rng(3);
  for (const auto& e : gradcheck::check(m, gradcheck::random_image(10, rng), {0, 0, 1})) {
    INFO(e.name);
    CHECK(e.max_relative_error < 1e-4);
  }
}

TEST_CASE("zero loss gradient gives zero parameter gradients; missing cache throws") {
  const auto m = gradcheck::random_model(gradcheck::tiny_config(), 4);
  Rng rng(4);
  ForwardCache cache;
  forward(gradcheck::random_image(10, rng), m, &cache);
  ViTParams g = zero_params(m.config);
  const std::vector<double> zero(3, 0.0);
  backward(m, cache, zero, g);
  for (const Tensor* t : g.tensors())
    for (double v : t->values()) CHECK(v == 0.0);
  ForwardCache empty;
  CHECK_THROWS(backward(m, empty, zero, g));
}

TEST_CASE("class token and its position row receive gradient") {
  const auto m = gradcheck::random_model(gradcheck::tiny_config(), 5);
  Rng rng(5);
  ForwardCache cache;
  const auto logits = forward(gradcheck::random_image(10, rng), m, &cache);
  ViTParams g = zero_params(m.config);
  backward(m, cache, bce_loss(logits, std::vector<std::uint8_t>{1, 1, 0}).grad, g);
  double cls = 0.0, pos0 = 0.0;
  for (double v : g.class_token.values()) cls += std::abs(v);
  for (double v : g.position_embeddings.row(0)) pos0 += std::abs(v);
  CHECK(cls > 0.0);
  CHECK(pos0 > 0.0);
}

TEST_CASE("adam: zero gradient holds, first step moves by lr") {
  Tensor theta(1, 1, 0.7), grad(1, 1, 0.0);
  Tensor* params[] = {&theta};
  const Tensor* grads[] = {&grad};
  AdamState state;
  AdamOptions o;
  o.weight_decay = 0.0;
  adam_step(params, grads, state, o);
  CHECK(theta(0, 0) == 0.7);

  grad(0, 0) = 1.0;
  AdamState fresh;
  o.lr = 0.01;
  adam_step(params, grads, fresh, o);
  CHECK(0.7 - theta(0, 0) == doctest::Approx(0.01).epsilon(1e-6));

  const AdamOptions defaults;
  CHECK(defaults.beta1 == 0.9);
  CHECK(defaults.beta2 == 0.999);
  CHECK(defaults.weight_decay == 0.001);
}

TEST_CASE("parameter counts") {
  const ViTConfig c = gradcheck::tiny_config();
  // E 25*8, pos 5*8, cls 8, ln1 16, qkv 2*8*12, msa 8*8, ln2 16,
  // mlp 8*16+16 + 16*8+8, head ln 16, head 8*3+3.
  const std::size_t hand = 200 + 40 + 8 + 16 + 192 + 64 + 16 + 144 + 136 + 16 + 27;
  CHECK(count_params(c) == hand);
  CHECK(zero_params(c).parameter_count() == hand);
  ViTConfig more = c;
  more.n_classes = 6;
  CHECK(count_params(more) - count_params(c) == 3 * 9);
}

TEST_CASE("checkpoint round trip in float32") {
  const auto m = gradcheck::random_model(gradcheck::tiny_config(), 9);
  std::stringstream buf;
  write_checkpoint(buf, m);
  const std::string bytes = buf.str();
  CHECK(bytes.substr(0, 4) == "TEDG");
  const auto back = read_checkpoint(buf);
  CHECK(back.config == m.config);
  std::vector<const Tensor*> a;
  m.params.for_each([&](const std::string&, const Tensor& t) { a.push_back(&t); });
  std::size_t i = 0;
  back.params.for_each([&](const std::string&, const Tensor& t) {
    const Tensor& ref = *a[i++];
    for (std::size_t j = 0; j < t.size(); ++j) CHECK(t.values()[j] == static_cast<double>(static_cast<float>(ref.values()[j])));
  });
  std::stringstream bad("TEDX");
  CHECK_THROWS(read_checkpoint(bad));
}

TEST_CASE("initialisation is seeded and truncated") {
  const ViTConfig c = gradcheck::tiny_config();
  const auto a = init_model(c, 3), b = init_model(c, 3);
  std::vector<double> va, vb;
  a.params.for_each([&](const std::string&, const Tensor& t) { va.insert(va.end(), t.values().begin(), t.values().end()); });
  b.params.for_each([&](const std::string&, const Tensor& t) { vb.insert(vb.end(), t.values().begin(), t.values().end()); });
  CHECK(va == vb);
  for (double v : a.params.patch_projection.values()) CHECK(std::abs(v) <= 2.0 * kInitStd);
  for (double v : a.params.layers[0].ln1_gain.values()) CHECK(v == 1.0);
  for (double v : a.params.head_bias.values()) CHECK(v == 0.0);
  ViTConfig bad = c;
  bad.n_heads = 3;
  CHECK_THROWS(bad.validate());
}
