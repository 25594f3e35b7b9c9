#include <cmath>

#include "bimanual/grad_check.hpp"
#include "bimanual/nn.hpp"
#include "bimanual/ops.hpp"
#include "bimanual/optim.hpp"
#include "doctest.h"

using namespace bimanual;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double scale = 1.0) {
  std::vector<double> v = rng.normal_vector(shape_numel(shape));
  for (double& x : v) x *= scale;
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

bool all_close(std::span<const double> a, std::span<const double> b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("matmul against identity") {
  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor c = matmul(a, eye);
  CHECK(c.shape() == Shape{2, 2});
  CHECK(all_close(c.data(), a.data(), 0.0));
}

TEST_CASE("matmul shape errors name the op and both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({4})), std::invalid_argument);
}

TEST_CASE("softmax of equal logits is uniform") {
  Tensor s = softmax(Tensor::from({3}, {0, 0, 0}));
  for (double v : s.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("layer_norm rows have zero mean and unit variance") {
  Rng rng(3);
  Tensor x = random_tensor({5, 17}, rng, false, 3.0);
  Tensor y = layer_norm(x, Tensor(), Tensor(), 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    double mu = 0, var = 0;
    for (std::size_t i = 0; i < 17; ++i) mu += y.at({r, i});
    mu /= 17;
    for (std::size_t i = 0; i < 17; ++i) var += (y.at({r, i}) - mu) * (y.at({r, i}) - mu);
    var /= 17;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(std::abs(var - 1.0) < 1e-12);
  }
}

TEST_CASE("broadcasting follows right-aligned extents") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor col = Tensor::from({2, 1}, {10, 20});
  Tensor row = Tensor::from({3}, {1, 1, 1});
  Tensor c = add(a, col);
  CHECK(c.shape() == Shape{2, 3});
  CHECK(c.at({1, 2}) == 26);
  CHECK(add(a, row).at({0, 0}) == 2);
  Tensor d = mul(Tensor::from({2, 1, 3}, {1, 2, 3, 4, 5, 6}), Tensor::from({4, 1}, {1, 2, 3, 4}));
  CHECK(d.shape() == Shape{2, 4, 3});
  CHECK(d.at({1, 3, 2}) == 24);
}

TEST_CASE("backward basics") {
  SUBCASE("d/dx sum(x*x) = 2x") {
    Tensor x = Tensor::from({1}, {3.0}, true);
    backward(sum(x * x));
    CHECK(x.grad()[0] == doctest::Approx(6.0));
  }
  SUBCASE("sum(a+b) gives all-ones gradients") {
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4}, true);
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8}, true);
    backward(sum(a + b));
    for (double g : a.grad()) CHECK(g == 1.0);
    for (double g : b.grad()) CHECK(g == 1.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor a = Tensor::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(a * 2.0), std::invalid_argument);
  }
  SUBCASE("detached loss is rejected") {
    Tensor a = Tensor::from({2}, {1, 2}, false);
    CHECK_THROWS_AS(backward(sum(a)), std::invalid_argument);
  }
  SUBCASE("shared subexpressions are visited once") {
    Tensor x = Tensor::from({1}, {2.0}, true);
    Tensor y = x * x;  // used twice below
    backward(sum(y + y));
    CHECK(x.grad()[0] == doctest::Approx(8.0));
  }
}

TEST_CASE("non-finite results raise") {
  CHECK_THROWS_AS(log(Tensor::from({1}, {-1.0})), NumericError);
  CHECK_THROWS_AS(div(Tensor::from({1}, {1.0}), Tensor::from({1}, {0.0})), NumericError);
}

TEST_CASE("grad_check oracles") {
  Rng rng(9);
  Tensor x = random_tensor({7}, rng, false);
  SUBCASE("sin") { CHECK(grad_check([](const Tensor& v) { return sum(sin(v)); }, x) < 1e-8); }
  SUBCASE("linear") {
    Tensor w = random_tensor({7, 1}, rng, false);
    CHECK(grad_check([&](const Tensor& v) { return sum(matmul(reshape(v, {1, 7}), w)); }, x) < 1e-10);
  }
  SUBCASE("nan loss is an error") {
    Tensor neg = Tensor::from({1}, {-1.0});
    CHECK_THROWS(grad_check([](const Tensor& v) { return sum(sqrt(v)); }, neg));
  }
}

TEST_CASE("every primitive passes a finite-difference check") {
  Rng rng(11);
  const auto check = [&](const char* name, const std::function<Tensor(const Tensor&)>& f, Shape shape, double shift = 0.0) {
    Tensor x = random_tensor(shape, rng, false);
    if (shift != 0.0) {
      for (double& v : x.mutable_data()) v = std::abs(v) + shift;
    }
    const double err = grad_check(f, x);
    INFO(name << " err=" << err);
    CHECK(err < 1e-6);
  };
  Tensor other = random_tensor({3, 4}, rng, false);
  Tensor vec = random_tensor({4}, rng, false);
  check("add_broadcast", [&](const Tensor& v) { return sum(square(v + vec)); }, {3, 4});
  check("mul", [&](const Tensor& v) { return sum(v * other); }, {3, 4});
  check("div", [&](const Tensor& v) { return sum(other / v); }, {3, 4}, 0.5);
  check("div_denominator_broadcast", [&](const Tensor& v) { return sum(other / sum(square(v), 1, true)); }, {3, 4}, 0.1);
  check("exp_log", [](const Tensor& v) { return sum(log(exp(v) + 1.0)); }, {5});
  check("sqrt", [](const Tensor& v) { return sum(sqrt(v)); }, {5}, 0.5);
  check("tanh", [](const Tensor& v) { return sum(tanh(v)); }, {5});
  check("sigmoid", [](const Tensor& v) { return sum(sigmoid(v)); }, {5});
  check("gelu", [](const Tensor& v) { return sum(gelu(v)); }, {6});
  check("silu", [](const Tensor& v) { return sum(silu(v)); }, {6});
  check("cos", [](const Tensor& v) { return sum(cos(v)); }, {6});
  check("mean_axis", [](const Tensor& v) { return sum(square(mean(v, 1))); }, {3, 4});
  check("sum_axis_keepdim", [](const Tensor& v) { return sum(square(sum(v, 0, true))); }, {3, 4});
  check("matmul_batched", [&](const Tensor& v) { return sum(square(matmul(v, transpose(v, 1, 2)))); }, {2, 3, 4});
  check("matmul_shared_a", [&](const Tensor& v) { return sum(square(matmul(other, v))); }, {2, 4, 3});
  check("permute", [&](const Tensor& v) { return sum(square(permute(v, {2, 0, 1})) * 0.5) + sum(slice(v, 2, 1, 3)); }, {2, 3, 4});
  check("concat", [&](const Tensor& v) { return sum(square(concat({v, v * 2.0}, 1))); }, {2, 3});
  check("softmax", [&](const Tensor& v) { return sum(softmax(v) * other); }, {3, 4});
  check("layer_norm", [&](const Tensor& v) { return sum(layer_norm(v, Tensor(), Tensor()) * other); }, {3, 4});
  check("cross", [&](const Tensor& v) { return sum(square(cross(v, slice(concat({v, v}, 0), 0, 1, 3)))); }, {2, 3});
}

TEST_CASE("layer modules pass finite-difference checks") {
  Rng rng(5);
  nn::ForwardContext eval_ctx;
  SUBCASE("linear + layernorm parameters") {
    nn::Linear lin(6, 4, rng);
    nn::LayerNorm ln(4);
    Tensor x = random_tensor({3, 6}, rng, false);
    Tensor target = random_tensor({3, 4}, rng, false);
    std::vector<Tensor> params = lin.parameters();
    for (auto& p : ln.parameters()) params.push_back(p);
    for (double& g : params[2].mutable_data()) g = rng.uniform(0.5, 1.5);
    const double err = grad_check([&] { return sum(square(ln.forward(lin.forward(x)) - target)); }, params);
    CHECK(err < 1e-6);
  }
  SUBCASE("full transformer block") {
    nn::EncoderLayer layer(8, 2, 16, rng);
    Tensor x = random_tensor({2, 5, 8}, rng, true);
    std::vector<double> bias(2 * 5, 0.0);
    bias[4] = -1e9;  // last key of the first item is masked
    Tensor key_bias = Tensor::from({2, 1, 1, 5}, bias);
    std::vector<Tensor> leaves = layer.parameters();
    leaves.push_back(x);
    const double err = grad_check([&] { return sum(square(layer.forward(x, key_bias, eval_ctx))); }, leaves);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("dropout contracts") {
  Rng rng(1);
  Tensor x = random_tensor({4, 4}, rng, false);
  Tensor same_rate0 = dropout(x, 0.0, true, rng);
  Tensor same_eval = dropout(x, 0.5, false, rng);
  CHECK(all_close(same_rate0.data(), x.data(), 0.0));
  CHECK(all_close(same_eval.data(), x.data(), 0.0));
  Rng r1(42), r2(42);
  Tensor a = dropout(x, 0.3, true, r1);
  Tensor b = dropout(x, 0.3, true, r2);
  CHECK(all_close(a.data(), b.data(), 0.0));
}

TEST_CASE("seeded construction is bitwise reproducible") {
  Rng r1(77), r2(77);
  nn::EncoderLayer l1(8, 2, 16, r1), l2(8, 2, 16, r2);
  Rng in(3);
  Tensor x = random_tensor({1, 4, 8}, in, false);
  nn::ForwardContext ctx;
  ctx.training = true;
  ctx.dropout = 0.1;
  Rng d1(5), d2(5);
  ctx.rng = &d1;
  Tensor y1 = l1.forward(x, Tensor(), ctx);
  ctx.rng = &d2;
  Tensor y2 = l2.forward(x, Tensor(), ctx);
  CHECK(all_close(y1.data(), y2.data(), 0.0));
}

TEST_CASE("gradient descent and adam reduce a quadratic") {
  Tensor w = Tensor::from({2}, {3.0, -2.0}, true);
  optim::Adam adam({w}, {.lr = 0.1});
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 200; ++i) {
    std::vector<Tensor> ps{w};
    optim::zero_grad(ps);
    Tensor loss = sum(square(w));
    if (i == 0) first = loss.item();
    last = loss.item();
    backward(loss);
    adam.step();
  }
  CHECK(last < 1e-3 * first);

  Tensor v = Tensor::from({2}, {30.0, -40.0}, true);
  std::vector<Tensor> ps{v};
  backward(sum(square(v)));
  const double before = optim::clip_grad_norm(ps, 1.0);
  CHECK(before == doctest::Approx(100.0));
  CHECK(optim::grad_norm(ps) == doctest::Approx(1.0));
}
