#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "doctest.h"
#include "pert/encoder.hpp"
#include "pert/gradcheck.hpp"

using namespace pert;

namespace {

EncoderConfig tiny_config(std::size_t vocab_size) {
  EncoderConfig cfg;
  cfg.num_layers = 2;
  cfg.d_model = 8;
  cfg.num_heads = 2;
  cfg.d_ff = 16;
  cfg.vocab_size = vocab_size;
  cfg.max_seq_len = 12;
  cfg.dropout = 0.0;
  cfg.activation = Activation::Gelu;
  return cfg;
}

// Straight-line reimplementation of the encoder forward pass on plain
// arrays: embeddings + norm, then per layer QKV projections, per-head scaled
// dot-product attention, output projection, residual/norm, FFN,
// residual/norm. Deliberately shares no code with the Tensor op path.
std::vector<double> reference_encode(const EncoderModel& model, const std::vector<int>& ids) {
  const std::size_t L = ids.size();
  const std::size_t d = model.cfg.d_model;
  const std::size_t heads = model.cfg.num_heads;
  const std::size_t dh = d / heads;
  const std::size_t dff = model.cfg.d_ff;

  const auto norm_rows = [&](std::vector<double>& h, const Tensor& gain, const Tensor& bias) {
    for (std::size_t i = 0; i < L; ++i) {
      double mu = 0.0;
      for (std::size_t j = 0; j < d; ++j) mu += h[i * d + j];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (h[i * d + j] - mu) * (h[i * d + j] - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + 1e-12);
      for (std::size_t j = 0; j < d; ++j) {
        h[i * d + j] = gain.at(j) * ((h[i * d + j] - mu) * inv) + bias.at(j);
      }
    }
  };
  const auto affine = [&](const std::vector<double>& x, const Tensor& w, const Tensor& b,
                          std::size_t in, std::size_t out) {
    std::vector<double> y(L * out, 0.0);
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t o = 0; o < out; ++o) {
        double acc = b.at(o);
        for (std::size_t p = 0; p < in; ++p) acc += x[i * in + p] * w.at(p, o);
        y[i * out + o] = acc;
      }
    }
    return y;
  };

  std::vector<double> h(L * d);
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      h[i * d + j] = model.token_embedding.at(static_cast<std::size_t>(ids[i]), j) +
                     model.position_embedding.at(i, j);
    }
  }
  norm_rows(h, model.embedding_norm_gain, model.embedding_norm_bias);

  for (const LayerParams& p : model.layers) {
    const auto q = affine(h, p.wq, p.bq, d, d);
    const auto k = affine(h, p.wk, p.bk, d, d);
    const auto v = affine(h, p.wv, p.bv, d, d);

    std::vector<double> ctx(L * d, 0.0);
    for (std::size_t head = 0; head < heads; ++head) {
      const std::size_t off = head * dh;
      for (std::size_t i = 0; i < L; ++i) {
        std::vector<double> logits(L);
        double mx = -1e300;
        for (std::size_t j = 0; j < L; ++j) {
          double acc = 0.0;
          for (std::size_t c = 0; c < dh; ++c) acc += q[i * d + off + c] * k[j * d + off + c];
          logits[j] = acc / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          logits[j] = std::exp(logits[j] - mx);
          z += logits[j];
        }
        for (std::size_t j = 0; j < L; ++j) {
          const double w = logits[j] / z;
          for (std::size_t c = 0; c < dh; ++c) ctx[i * d + off + c] += w * v[j * d + off + c];
        }
      }
    }

    const auto projected = affine(ctx, p.wo, p.bo, d, d);
    for (std::size_t i = 0; i < L * d; ++i) h[i] += projected[i];
    norm_rows(h, p.attn_norm_gain, p.attn_norm_bias);

    auto inner = affine(h, p.w1, p.b1, d, dff);
    for (double& x : inner) {
      x = 0.5 * x * (1.0 + std::tanh(0.7978845608028654 * (x + 0.044715 * x * x * x)));
    }
    const auto ffn = affine(inner, p.w2, p.b2, dff, d);
    for (std::size_t i = 0; i < L * d; ++i) h[i] += ffn[i];
    norm_rows(h, p.ffn_norm_gain, p.ffn_norm_bias);
  }
  return h;
}

}  // namespace

TEST_CASE("tokenize maps words, handles empty text, truncates with [SEP] last") {
  Vocabulary vocab({"hello", "world"});
  CHECK(tokenize("Hello world", vocab, 16) == std::vector<int>{2, 5, 6, 3});
  CHECK(tokenize("", vocab, 16) == std::vector<int>{2, 3});
  CHECK(tokenize("Hello, WORLD!", vocab, 16) == std::vector<int>{2, 5, 6, 3});
  CHECK(tokenize("unseen words here", vocab, 16) == std::vector<int>{2, 1, 1, 1, 3});

  std::string long_text;
  for (int i = 0; i < 300; ++i) long_text += "hello ";
  const auto ids = tokenize(long_text, vocab, 8);
  CHECK(ids.size() == 8);
  CHECK(ids.back() == Vocabulary::kSep);
  CHECK(ids.front() == Vocabulary::kCls);
}

TEST_CASE("vocabulary file round trip, duplicates, hashing") {
  Vocabulary vocab({"alpha", "beta", "gamma"});
  CHECK(vocab.size() == 8);
  CHECK(vocab.id_of("alpha") == 5);
  CHECK(vocab.id_of("gamma") == 7);
  CHECK(vocab.id_of("missing") == Vocabulary::kUnk);

  const std::string path = "vocab_test_tmp.txt";
  vocab.save(path);
  Vocabulary loaded = Vocabulary::load(path);
  CHECK(loaded.tokens() == vocab.tokens());
  CHECK(loaded.content_hash() == vocab.content_hash());
  std::remove(path.c_str());

  CHECK_THROWS_AS(Vocabulary({"dup", "dup"}), IoError);
  CHECK(Vocabulary({"alpha", "betb"}).content_hash() != vocab.content_hash());
}

TEST_CASE("registry path count is 4 + 16 * num_layers") {
  Rng rng(1);
  for (std::size_t layers : {1u, 2u, 3u}) {
    EncoderConfig cfg = tiny_config(20);
    cfg.num_layers = layers;
    EncoderModel model(cfg, rng);
    CHECK(model.registry.size() == 4 + 16 * layers);
  }
}

TEST_CASE("encode determinism, pooled shape, id validation") {
  Rng rng(2);
  EncoderModel model(tiny_config(20), rng);
  const std::vector<int> ids = {2, 7, 9, 11, 3};

  NoGradGuard ng;
  const auto a = encode(model, ids, Mode::Eval);
  const auto b = encode(model, ids, Mode::Eval);
  CHECK(a.hidden.data() == b.hidden.data());
  CHECK(a.pooled.data() == b.pooled.data());
  CHECK(a.pooled.shape() == Shape{8});
  CHECK(a.hidden.shape() == Shape{5, 8});

  CHECK_THROWS_AS(encode(model, {2, 25, 3}, Mode::Eval), VocabError);
  CHECK_THROWS_AS(encode(model, {2, -1, 3}, Mode::Eval), VocabError);
}

TEST_CASE("encode matches an independent straight-line forward pass") {
  Rng rng(3);
  EncoderModel model(tiny_config(20), rng);
  NoGradGuard ng;
  for (const auto& ids :
       {std::vector<int>{2, 3}, std::vector<int>{2, 5, 6, 7, 3}, std::vector<int>{2, 19, 18, 3}}) {
    const auto got = encode(model, ids, Mode::Eval);
    const auto want = reference_encode(model, ids);
    REQUIRE(got.hidden.numel() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(std::abs(got.hidden.at(i) - want[i]) < 1e-9);
    }
  }
}

TEST_CASE("appending [PAD] never changes the pooled output") {
  Rng rng(4);
  EncoderModel model(tiny_config(20), rng);
  NoGradGuard ng;
  const std::vector<int> ids = {2, 7, 9, 3};
  std::vector<int> padded = ids;
  padded.insert(padded.end(), {0, 0, 0});
  const auto plain = encode(model, ids, Mode::Eval);
  const auto with_pad = encode(model, padded, Mode::Eval);
  for (std::size_t j = 0; j < plain.pooled.numel(); ++j) {
    CHECK(std::abs(plain.pooled.at(j) - with_pad.pooled.at(j)) < 1e-9);
  }
}

TEST_CASE("swapping two distinct tokens changes the pooled output") {
  Rng rng(5);
  EncoderModel model(tiny_config(50), rng);
  NoGradGuard ng;
  int changed = 0;
  for (int round = 0; round < 100; ++round) {
    std::vector<int> ids = {2};
    for (int i = 0; i < 6; ++i) ids.push_back(5 + static_cast<int>(rng.uniform_int(45)));
    ids.push_back(3);
    // pick two distinct interior positions with different ids
    std::size_t a = 1 + rng.uniform_int(6), b = 1 + rng.uniform_int(6);
    if (ids[a] == ids[b]) continue;
    const auto before = encode(model, ids, Mode::Eval);
    std::swap(ids[a], ids[b]);
    const auto after = encode(model, ids, Mode::Eval);
    double diff = 0.0;
    for (std::size_t j = 0; j < before.pooled.numel(); ++j) {
      diff = std::max(diff, std::abs(before.pooled.at(j) - after.pooled.at(j)));
    }
    CHECK(diff > 1e-9);
    ++changed;
  }
  CHECK(changed > 50);
}

TEST_CASE("attention with empty prefix equals attention without") {
  Rng rng(6);
  EncoderModel model(tiny_config(20), rng);
  NoGradGuard ng;
  Tensor h = Tensor::randn({4, 8}, rng, 1.0);
  const std::vector<std::uint8_t> mask(4, 1);
  const auto none = attention_layer(model, 0, h, mask, std::nullopt, Mode::Eval, nullptr);
  const auto empty = attention_layer(
      model, 0, h, mask, std::make_pair(Tensor::zeros({0, 8}), Tensor::zeros({0, 8})), Mode::Eval,
      nullptr);
  for (std::size_t i = 0; i < none.numel(); ++i) {
    CHECK(std::abs(none.at(i) - empty.at(i)) <= 1e-12);
  }
}

TEST_CASE("single-token attention with identity weights is layer_norm(x + V(x))") {
  Rng rng(7);
  EncoderConfig cfg = tiny_config(20);
  cfg.num_heads = 1;
  cfg.d_model = 4;
  cfg.d_ff = 8;
  EncoderModel model(cfg, rng);
  // identity-like weights, zero biases
  for (auto* w : {&model.layers[0].wq, &model.layers[0].wk, &model.layers[0].wo}) {
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j) w->at(i, j) = i == j ? 1.0 : 0.0;
  }
  // V is a recognizable non-identity map so the trace is meaningful.
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) model.layers[0].wv.at(i, j) = i == j ? 2.0 : 0.0;

  NoGradGuard ng;
  Tensor x = Tensor::from({0.3, -0.7, 1.1, 0.2}, {1, 4});
  const auto got = attention_layer(model, 0, x, {1}, std::nullopt, Mode::Eval, nullptr);
  // softmax over one logit is 1, so attention returns V(x) = 2x exactly
  const auto want = layer_norm(add(x, scale(x, 2.0)), model.layers[0].attn_norm_gain,
                               model.layers[0].attn_norm_bias);
  for (std::size_t i = 0; i < 4; ++i) CHECK(got.at(i) == doctest::Approx(want.at(i)).epsilon(1e-12));
}

TEST_CASE("prefix gradients match finite differences") {
  Rng rng(8);
  EncoderModel model(tiny_config(20), rng);
  Tensor pk = Tensor::randn({3, 8}, rng, 0.5, true);
  Tensor pv = Tensor::randn({3, 8}, rng, 0.5, true);
  Tensor h = Tensor::randn({4, 8}, rng, 1.0);
  Tensor w = Tensor::randn({4, 8}, rng, 1.0);
  const std::vector<std::uint8_t> mask(4, 1);
  const auto f = [&] {
    Tensor out = attention_layer(model, 0, h, mask, std::make_pair(pk, pv), Mode::Eval, nullptr);
    return sum_all(mul(out, w));
  };
  CHECK(finite_diff_check(f, {pk, pv}) < 1e-5);
}

TEST_CASE("attention rejects prefix with the wrong width") {
  Rng rng(9);
  EncoderModel model(tiny_config(20), rng);
  Tensor h = Tensor::randn({4, 8}, rng, 1.0);
  CHECK_THROWS_AS(attention_layer(model, 0, h, std::vector<std::uint8_t>(4, 1),
                                  std::make_pair(Tensor::zeros({3, 6}), Tensor::zeros({3, 6})),
                                  Mode::Eval, nullptr),
                  ShapeError);
}

TEST_CASE("ffn with zero weights reduces to layer_norm") {
  Rng rng(10);
  EncoderModel model(tiny_config(20), rng);
  auto& p = model.layers[0];
  for (Tensor* t : {&p.w1, &p.b1, &p.w2, &p.b2}) {
    std::fill(t->data().begin(), t->data().end(), 0.0);
  }
  NoGradGuard ng;
  Tensor h = Tensor::randn({3, 8}, rng, 1.0);
  const auto got = ffn_layer(model, 0, h, Mode::Eval, nullptr);
  const auto want = layer_norm(h, p.ffn_norm_gain, p.ffn_norm_bias);
  for (std::size_t i = 0; i < got.numel(); ++i) {
    CHECK(got.at(i) == doctest::Approx(want.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("ffn d_ff=1 relu example reproduces the hand computation") {
  Rng rng(11);
  EncoderConfig cfg;
  cfg.num_layers = 1;
  cfg.d_model = 2;
  cfg.num_heads = 1;
  cfg.d_ff = 1;
  cfg.vocab_size = 10;
  cfg.max_seq_len = 4;
  cfg.dropout = 0.0;
  cfg.activation = Activation::Relu;
  EncoderModel model(cfg, rng);
  auto& p = model.layers[0];
  p.w1.at(0, 0) = 1.0;
  p.w1.at(1, 0) = -1.0;
  p.b1.at(0) = 0.5;
  p.w2.at(0, 0) = 2.0;
  p.w2.at(0, 1) = -3.0;
  p.b2.at(0) = 0.25;
  p.b2.at(1) = -0.5;

  NoGradGuard ng;
  Tensor h = Tensor::from({0.2, -0.4}, {1, 2});
  const auto got = ffn_layer(model, 0, h, Mode::Eval, nullptr);

  // by hand: inner = relu(0.2 - (-0.4) + 0.5) = 1.1
  // ffn = [1.1*2 + 0.25, 1.1*(-3) - 0.5] = [2.45, -3.8]
  // residual = [2.65, -4.2]; normalized (gain 1, bias 0) -> [1, -1]
  CHECK(got.at(0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(got.at(1) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("ffn gradients match finite differences") {
  Rng rng(12);
  EncoderModel model(tiny_config(20), rng);
  auto& p = model.layers[1];
  Tensor h = Tensor::randn({3, 8}, rng, 1.0);
  Tensor w = Tensor::randn({3, 8}, rng, 1.0);
  const auto f = [&] { return sum_all(mul(ffn_layer(model, 1, h, Mode::Eval, nullptr), w)); };
  CHECK(finite_diff_check(f, {p.w1, p.b1, p.w2, p.b2, p.ffn_norm_gain, p.ffn_norm_bias}) < 1e-5);
}

TEST_CASE("train mode requires an rng when dropout is active") {
  Rng rng(13);
  EncoderConfig cfg = tiny_config(20);
  cfg.dropout = 0.1;
  EncoderModel model(cfg, rng);
  CHECK_THROWS_AS(encode(model, {2, 7, 3}, Mode::Train, nullptr), UsageError);
  Rng drop_rng(1);
  CHECK_NOTHROW(encode(model, {2, 7, 3}, Mode::Train, &drop_rng));
}
