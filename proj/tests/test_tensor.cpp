#include <cmath>
#include <vector>

#include "doctest.h"
#include "pert/gradcheck.hpp"
#include "pert/ops.hpp"
#include "pert/tensor.hpp"

using namespace pert;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, bool rg = true) {
  Tensor t = Tensor::zeros(shape, rg);
  for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform() * 4.0 - 2.0;
  return t;
}

// Scalarizes an op output against fixed random weights so gradient flow is
// exercised with non-uniform upstream gradients.
Tensor weighted_sum(const Tensor& out, const Tensor& weights) { return sum_all(mul(out, weights)); }

}  // namespace

TEST_CASE("matmul identity and forced arithmetic") {
  Tensor eye = Tensor::from({1, 0, 0, 1}, {2, 2});
  Tensor m = Tensor::from({1, 2, 3, 4}, {2, 2});
  Tensor prod = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(prod.at(i) == m.at(i));

  Tensor a = Tensor::from({1, 2}, {1, 2});
  Tensor b = Tensor::from({3, 4}, {2, 1});
  CHECK(matmul(a, b).item() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul rejects mismatched shapes, naming both") {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[3 x 4]"), ShapeError);
  try {
    matmul(a, b);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("[5 x 2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients match finite differences") {
  Rng rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor w = random_tensor({3, 2}, rng, false);
  const double err = finite_diff_check([&] { return weighted_sum(matmul(a, b), w); }, {a, b});
  CHECK(err < 1e-6);
}

TEST_CASE("softmax symmetry and closed form") {
  Tensor x = Tensor::from({1, 1, 1}, {3});
  Tensor y = softmax_lastdim(x);
  for (std::size_t i = 0; i < 3; ++i) CHECK(y.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-14));

  Tensor z = softmax_lastdim(Tensor::from({0.0, std::log(3.0)}, {2}));
  CHECK(z.at(0) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(z.at(1) == doctest::Approx(0.75).epsilon(1e-14));
}

TEST_CASE("softmax shift invariance and row sums") {
  Rng rng(11);
  for (int round = 0; round < 20; ++round) {
    Tensor x = random_tensor({4, 5}, rng, false);
    Tensor shifted = Tensor::zeros({4, 5});
    for (std::size_t i = 0; i < x.numel(); ++i) shifted.at(i) = x.at(i) + 13.5;
    Tensor y0 = softmax_lastdim(x);
    Tensor y1 = softmax_lastdim(shifted);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y0.at(i) - y1.at(i)) <= 1e-12);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) s += y0.at(r, c);
      CHECK(std::abs(s - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax handles -inf mask entries and rejects NaN") {
  const double inf = std::numeric_limits<double>::infinity();
  Tensor x = Tensor::from({0.5, -inf, 1.0}, {3});
  Tensor y = softmax_lastdim(x);
  CHECK(y.at(1) == 0.0);
  CHECK(y.at(0) + y.at(2) == doctest::Approx(1.0).epsilon(1e-14));

  Tensor bad = Tensor::from({0.0, std::nan("")}, {2});
  CHECK_THROWS_AS(softmax_lastdim(bad), NumericError);
}

TEST_CASE("layer_norm constant row and two-point row") {
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  Tensor y = layer_norm(Tensor::from({5, 5, 5}, {3}), gain, bias);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(y.at(i)) < 1e-5);

  Tensor g2 = Tensor::full({2}, 1.0);
  Tensor b2 = Tensor::zeros({2});
  Tensor y2 = layer_norm(Tensor::from({1, 3}, {2}), g2, b2);
  CHECK(y2.at(0) == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y2.at(1) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("layer_norm pre-affine rows have vanishing mean") {
  Rng rng(3);
  Tensor x = random_tensor({6, 8}, rng, false);
  Tensor y = layer_norm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}));
  for (std::size_t r = 0; r < 6; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < 8; ++c) mean += y.at(r, c);
    CHECK(std::abs(mean / 8.0) < 1e-12);
  }
}

TEST_CASE("layer_norm gradients match finite differences") {
  Rng rng(5);
  Tensor x = random_tensor({3, 6}, rng);
  Tensor gain = random_tensor({6}, rng);
  Tensor bias = random_tensor({6}, rng);
  Tensor w = random_tensor({3, 6}, rng, false);
  const double err =
      finite_diff_check([&] { return weighted_sum(layer_norm(x, gain, bias), w); }, {x, gain, bias});
  CHECK(err < 1e-6);
}

TEST_CASE("activation point values") {
  CHECK(relu(Tensor::scalar(-2.0)).item() == 0.0);
  CHECK(gelu(Tensor::scalar(0.0)).item() == 0.0);

  Tensor x = Tensor::scalar(0.0, true);
  backward(tanh_act(x));
  CHECK(x.grad()[0] == doctest::Approx(1.0).epsilon(1e-14));

  CHECK_THROWS_AS(activation_from_string("swish"), ConfigError);
}

TEST_CASE("backward on linear and quadratic sums") {
  Tensor w = Tensor::from({1, 2, 3}, {3}, true);
  backward(sum_all(w));
  CHECK(w.grad() == std::vector<double>{1, 1, 1});

  Tensor v = Tensor::from({1, 2, 3}, {3}, true);
  backward(sum_all(mul(v, v)));
  CHECK(v.grad() == std::vector<double>{2, 4, 6});
}

TEST_CASE("repeated backward accumulates; non-scalar loss rejected") {
  Tensor w = Tensor::from({1, 2}, {2}, true);
  Tensor loss = sum_all(w);
  Tape tape = Tape::from(loss);
  tape.backward();
  tape.backward();
  CHECK(w.grad() == std::vector<double>{2, 2});

  CHECK_THROWS_AS(backward(w), UsageError);
}

TEST_CASE("tape order is topological and visits ops once") {
  Tensor a = Tensor::from({1, 2}, {2}, true);
  Tensor b = mul(a, a);
  Tensor c = add(b, a);
  Tensor loss = sum_all(c);
  Tape tape = Tape::from(loss);
  const auto& order = tape.order();
  // Each node's parents appear earlier in the order, exactly once.
  for (std::size_t i = 0; i < order.size(); ++i) {
    CHECK(std::count(order.begin(), order.end(), order[i]) == 1);
    for (const auto& parent : order[i]->parents) {
      const auto it = std::find(order.begin(), order.end(), parent);
      CHECK(it != order.end());
      CHECK(static_cast<std::size_t>(it - order.begin()) < i);
    }
  }
}

TEST_CASE("finite_diff_check oracle self-tests") {
  SUBCASE("quadratic") {
    Tensor w = Tensor::from({0.5, -1.25, 2.0}, {3}, true);
    const auto f = [&] { return sum_all(mul(w, w)); };
    CHECK(finite_diff_check(f, {w}) < 1e-9);
  }
  SUBCASE("softmax cross-entropy toy") {
    Tensor w = Tensor::from({0.3, -0.7, 1.1, 0.2}, {4}, true);
    Tensor onehot = Tensor::from({1, 0, 0, 0}, {4});
    const auto f = [&] { return sub(logsumexp(w), dot(w, onehot)); };
    CHECK(finite_diff_check(f, {w}) < 1e-6);
  }
  SUBCASE("detects corrupted gradients") {
    Tensor w = Tensor::from({0.5, -1.25, 2.0}, {3}, true);
    const auto f = [&] { return sum_all(mul(w, w)); };
    auto grads = autodiff_gradients(f, {w});
    grads[0][0] *= 1.05;
    CHECK(compare_to_finite_differences(f, {w}, grads) > 1e-2);
  }
}

TEST_CASE("gradients of remaining ops match finite differences") {
  Rng rng(23);
  Tensor w34 = random_tensor({3, 4}, rng, false);
  Tensor w43 = random_tensor({4, 3}, rng, false);
  Tensor w4 = random_tensor({4}, rng, false);
  Tensor w3 = random_tensor({3}, rng, false);
  Tensor w74 = random_tensor({7, 4}, rng, false);
  Tensor w35 = random_tensor({3, 5}, rng, false);

  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({3, 4}, rng);
  Tensor bias = random_tensor({4}, rng);
  Tensor v1 = random_tensor({4}, rng);
  Tensor v2 = random_tensor({4}, rng);
  Tensor c1 = random_tensor({4, 4}, rng);
  Tensor c2 = random_tensor({3, 4}, rng);
  Tensor s1 = random_tensor({1}, rng);
  Tensor s2 = random_tensor({1}, rng);
  Tensor s3 = random_tensor({1}, rng);

  const struct {
    const char* name;
    std::function<Tensor()> f;
    std::vector<Tensor> params;
  } cases[] = {
      {"add", [&] { return weighted_sum(add(a, b), w34); }, {a, b}},
      {"sub", [&] { return weighted_sum(sub(a, b), w34); }, {a, b}},
      {"mul", [&] { return weighted_sum(mul(a, b), w34); }, {a, b}},
      {"scale", [&] { return weighted_sum(scale(a, -1.7), w34); }, {a}},
      {"add_bias", [&] { return weighted_sum(add_bias(a, bias), w34); }, {a, bias}},
      {"transpose", [&] { return weighted_sum(transpose(a), w43); }, {a}},
      {"softmax", [&] { return weighted_sum(softmax_lastdim(a), w34); }, {a}},
      {"gelu", [&] { return weighted_sum(gelu(a), w34); }, {a}},
      {"tanh", [&] { return weighted_sum(tanh_act(a), w34); }, {a}},
      {"mean", [&] { return mean_all(mul(a, a)); }, {a}},
      {"dot", [&] { return dot(v1, v2); }, {v1, v2}},
      {"concat0", [&] { return weighted_sum(concat0(c1, c2), w74); }, {c1, c2}},
      {"row", [&] { return dot(row(a, 1), w4); }, {a}},
      {"slice_rows", [&] { return weighted_sum(slice_rows(a, 1, 2), slice_rows(w34, 0, 2)); }, {a}},
      {"slice_cols", [&] { return weighted_sum(slice_cols(a, 1, 2), slice_cols(w34, 0, 2)); }, {a}},
      {"concat_cols",
       [&] { return weighted_sum(concat_cols({slice_cols(a, 0, 2), slice_cols(b, 0, 3)}), w35); },
       {a, b}},
      {"stack_scalars", [&] { return dot(stack_scalars({s1, s2, s3}), w3); }, {s1, s2, s3}},
      {"logsumexp", [&] { return logsumexp(v1); }, {v1}},
      {"l2_normalize_rows", [&] { return weighted_sum(l2_normalize_rows(a), w34); }, {a}},
  };
  for (const auto& tc : cases) {
    INFO(tc.name);
    CHECK(finite_diff_check(tc.f, tc.params) < 1e-6);
  }

  SUBCASE("relu away from the kink") {
    Tensor x = Tensor::from({-1.5, 0.75, 2.0, -0.25}, {4}, true);
    CHECK(finite_diff_check([&] { return dot(relu(x), w4); }, {x}) < 1e-6);
  }
  SUBCASE("max_lastdim with separated entries") {
    Tensor x = Tensor::from({0.1, 1.4, -0.8, 0.9, 0.2, -1.3}, {2, 3}, true);
    CHECK(finite_diff_check([&] { return sum_all(max_lastdim(x)); }, {x}) < 1e-6);
  }
}

TEST_CASE("max_lastdim and l2_normalize forward values") {
  Tensor x = Tensor::from({1, 5, 3, -2, -7, -1}, {2, 3});
  Tensor m = max_lastdim(x);
  CHECK(m.at(0) == 5.0);
  CHECK(m.at(1) == -1.0);

  Tensor n = l2_normalize_rows(Tensor::from({3, 4, 0, 5}, {2, 2}));
  CHECK(n.at(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(n.at(0, 1) == doctest::Approx(0.8).epsilon(1e-14));
  CHECK(n.at(1, 1) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("dropout is inverted, seeded, and identity at p=0") {
  Rng rng(99);
  Tensor x = Tensor::full({1000}, 1.0);
  Tensor y = dropout(x, 0.25, rng);
  std::size_t kept = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const bool is_kept = y.at(i) != 0.0;
    if (is_kept) {
      CHECK(y.at(i) == doctest::Approx(1.0 / 0.75).epsilon(1e-14));
      ++kept;
    }
  }
  CHECK(kept > 650);
  CHECK(kept < 850);

  Rng r1(7), r2(7);
  Tensor y1 = dropout(x, 0.5, r1);
  Tensor y2 = dropout(x, 0.5, r2);
  CHECK(y1.data() == y2.data());

  Rng r3(1);
  Tensor same = dropout(x, 0.0, r3);
  CHECK(same.same_storage(x));

  CHECK_THROWS_AS(dropout(x, 1.0, rng), ConfigError);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor a = Tensor::from({1, 2}, {2}, true);
  NoGradGuard ng;
  Tensor y = mul(a, a);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->is_leaf());
}

TEST_CASE("seeded randn is bitwise reproducible") {
  Rng r1(1234), r2(1234);
  Tensor a = Tensor::randn({4, 4}, r1, 0.02);
  Tensor b = Tensor::randn({4, 4}, r2, 0.02);
  CHECK(a.data() == b.data());
}
