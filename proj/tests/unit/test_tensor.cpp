#include <doctest.h>

#include <cmath>
#include <functional>
#include <string>

#include "lmaml/tensor.hpp"
#include "../support/oracles.hpp"

using namespace lmaml;
using lmaml::testing::central_differences;
using lmaml::testing::random_tensor;
using lmaml::testing::random_values;
using lmaml::testing::relative_error;

namespace {

using TensorFn = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

std::vector<double> flatten(const std::vector<Tensor<double>>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

std::vector<Tensor<double>> unflatten(const std::vector<double>& flat, const std::vector<Shape>& shapes) {
  std::vector<Tensor<double>> out;
  std::size_t at = 0;
  for (const auto& s : shapes) {
    const std::size_t n = shape_numel(s);
    out.emplace_back(s, std::vector<double>(flat.begin() + at, flat.begin() + at + n));
    at += n;
  }
  return out;
}

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  TensorFn fn;
  double lo = -1.0;
  double hi = 1.0;
};

// L(x) = sum(r1 * y * y + r2 * y), y = op(x): nonlinear in y so that second
// derivatives exercise the op's own backward rule.
Tensor<double> probe_loss(const Tensor<double>& y, std::uint64_t seed) {
  const auto r1 = random_tensor(y.shape(), seed + 101);
  const auto r2 = random_tensor(y.shape(), seed + 202);
  return sum_all(add(mul(r1, mul(y, y)), mul(r2, y)));
}

void check_op(const OpCase& c, std::uint64_t seed) {
  CAPTURE(c.name);
  std::vector<Tensor<double>> inputs;
  for (std::size_t i = 0; i < c.shapes.size(); ++i) inputs.push_back(random_tensor(c.shapes[i], seed + i, c.lo, c.hi));
  const auto x0 = flatten(inputs);

  auto first_order = [&](const std::vector<double>& flat, bool create_graph, Tape<double>& tape,
                         std::vector<Tensor<double>>& vars) {
    vars.clear();
    for (auto& t : unflatten(flat, c.shapes)) vars.push_back(tape.watch(t));
    const auto loss = probe_loss(c.fn(vars), seed);
    return std::make_pair(loss, grad(loss, vars, create_graph));
  };
  auto loss_value = [&](const std::vector<double>& flat) {
    return probe_loss(c.fn(unflatten(flat, c.shapes)), seed).item();
  };

  // level 1
  {
    Tape<double> tape;
    std::vector<Tensor<double>> vars;
    const auto [loss, g] = first_order(x0, false, tape, vars);
    const auto fd = central_differences(loss_value, x0);
    CHECK(relative_error(flatten(g), fd) <= 1e-5);
  }

  // level 2: h(x) = <grad L(x), v>
  const auto v = random_values(x0.size(), seed + 999);
  auto h_value = [&](const std::vector<double>& flat) {
    Tape<double> tape;
    std::vector<Tensor<double>> vars;
    const auto g = flatten(first_order(flat, false, tape, vars).second);
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * v[i];
    return s;
  };
  Tape<double> tape;
  std::vector<Tensor<double>> vars;
  auto [loss, g] = first_order(x0, true, tape, vars);
  const auto vs = unflatten(v, c.shapes);
  Tensor<double> h = sum_all(mul(g[0], vs[0]));
  for (std::size_t k = 1; k < g.size(); ++k) h = add(h, sum_all(mul(g[k], vs[k])));
  REQUIRE(h.on_tape());
  const auto hg = grad(h, vars);
  const auto fd = central_differences(h_value, x0);
  CHECK(relative_error(flatten(hg), fd) <= 1e-5);
}

IndexList make_index(std::vector<std::size_t> v) {
  return std::make_shared<const std::vector<std::size_t>>(std::move(v));
}

}  // namespace

TEST_CASE("elementwise add and matmul shapes") {
  const Tensor<double> a({2}, {1, 2});
  const Tensor<double> b({2}, {3, 4});
  CHECK(add(a, b).to_vector() == std::vector<double>{4, 6});
  const auto m = matmul(Tensor<double>::filled({2, 3}, 1.0), Tensor<double>::filled({3, 1}, 2.0));
  CHECK(m.shape() == Shape{2, 1});
  CHECK(m.to_vector() == std::vector<double>{6, 6});
}

TEST_CASE("shape mismatch names op and shapes") {
  const Tensor<double> a({2}, {1, 2});
  const Tensor<double> b({3}, {1, 2, 3});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
    CHECK(msg.find("[3]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 1})), ShapeError);
  CHECK_THROWS_AS(Tensor<double>({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("recording on a closed tape fails") {
  Tape<double> tape;
  const auto x = tape.watch(Tensor<double>::scalar(1.0));
  tape.close();
  CHECK(tape.closed());
  CHECK_THROWS_AS(add(x, x), TapeError);
  CHECK_THROWS_AS(tape.watch(Tensor<double>::scalar(2.0)), TapeError);
}

TEST_CASE("analytic gradients") {
  SUBCASE("x^2 at 3") {
    Tape<double> tape;
    const auto x = tape.watch(Tensor<double>::scalar(3.0));
    const auto g = grad(mul(x, x), std::vector{x});
    CHECK(g[0].item() == doctest::Approx(6.0).epsilon(1e-15));
  }
  SUBCASE("linear form") {
    Tape<double> tape;
    const auto w = tape.watch(Tensor<double>({3}, {1, 1, 1}));
    const Tensor<double> x({3}, {1, 2, 3});
    const auto g = grad(sum_all(mul(w, x)), std::vector{w});
    CHECK(g[0].to_vector() == std::vector<double>{1, 2, 3});
  }
  SUBCASE("second derivative of x^3 at 2") {
    Tape<double> tape;
    const auto x = tape.watch(Tensor<double>::scalar(2.0));
    const auto y = mul(x, mul(x, x));
    const auto dy = grad(y, std::vector{x}, true);
    CHECK(dy[0].item() == doctest::Approx(12.0));
    CHECK(dy[0].on_tape());
    const auto d2y = grad(dy[0], std::vector{x});
    CHECK(d2y[0].item() == doctest::Approx(12.0).epsilon(1e-14));
    CHECK(tape.generation() == 1);
  }
}

TEST_CASE("gradient errors") {
  Tape<double> tape;
  const auto x = tape.watch(Tensor<double>({2}, {1, 2}));
  CHECK_THROWS_AS(grad(mul(x, x), std::vector{x}), ShapeError);
  const Tensor<double> constant({2}, {1, 2});
  CHECK_THROWS_AS(grad(sum_all(mul(x, x)), std::vector{constant}), TapeError);
  CHECK_THROWS_AS(grad(sum_all(constant), std::vector{x}), TapeError);
}

TEST_CASE("unlinked tensors stay constants") {
  const Tensor<double> c({2}, {1, 2});
  const auto y = mul(c, c);
  CHECK_FALSE(y.on_tape());
  Tape<double> tape;
  const auto x = tape.watch(Tensor<double>({2}, {3, 4}));
  const auto size_before = tape.size();
  (void)mul(c, c);
  CHECK(tape.size() == size_before);
  const auto z = sum_all(mul(x, c));
  CHECK(grad(z, std::vector{x})[0].to_vector() == std::vector<double>{1, 2});
}

TEST_CASE("random 10-parameter function matches finite differences") {
  const auto w0 = random_values(10, 42);
  const Tensor<double> m = random_tensor({5, 3}, 43);
  auto build = [&](const Tensor<double>& w) {
    const auto a = reshape(w, {2, 5});
    const auto h = matmul(a, m);                             // 2x3
    const auto s = log_softmax(add(h, exp(scale(h, 0.5))));  // 2x3
    const auto r = rsqrt(add_scalar(mul(w, w), 1.0));
    return add(sum_all(mul(s, s)), sum_all(mul(r, w)));
  };
  Tape<double> tape;
  const auto w = tape.watch(Tensor<double>({10}, w0));
  const auto g = grad(build(w), std::vector{w})[0].to_vector();
  const auto fd =
      central_differences([&](const std::vector<double>& v) { return build(Tensor<double>({10}, v)).item(); }, w0);
  CHECK(relative_error(g, fd) <= 1e-6);
}

TEST_CASE("every differentiable op matches finite differences through two levels") {
  const std::vector<OpCase> cases = {
      {"add", {{3, 4}, {3, 4}}, [](auto& x) { return add(x[0], x[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](auto& x) { return sub(x[0], x[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& x) { return mul(x[0], x[1]); }},
      {"neg", {{5}}, [](auto& x) { return neg(x[0]); }},
      {"scale", {{5}}, [](auto& x) { return scale(x[0], 1.7); }},
      {"add_scalar", {{5}}, [](auto& x) { return add_scalar(x[0], -0.3); }},
      {"exp", {{6}}, [](auto& x) { return exp(x[0]); }},
      {"rsqrt", {{6}}, [](auto& x) { return rsqrt(x[0]); }, 0.5, 2.0},
      {"relu", {{8}}, [](auto& x) { return relu(x[0]); }},
      {"matmul", {{3, 4}, {4, 2}}, [](auto& x) { return matmul(x[0], x[1]); }},
      {"matmul_ta", {{4, 3}, {4, 2}}, [](auto& x) { return matmul(x[0], x[1], true, false); }},
      {"matmul_tb", {{3, 4}, {2, 4}}, [](auto& x) { return matmul(x[0], x[1], false, true); }},
      {"matmul_tab", {{4, 3}, {2, 4}}, [](auto& x) { return matmul(x[0], x[1], true, true); }},
      {"conv2d", {{2, 2, 5, 4}, {3, 2, 3, 3}}, [](auto& x) { return conv2d(x[0], x[1], 1); }},
      {"conv2d_nopad", {{1, 2, 5, 5}, {2, 2, 3, 3}}, [](auto& x) { return conv2d(x[0], x[1], 0); }},
      {"conv2d_input_grad", {{2, 3, 5, 4}, {3, 2, 3, 3}},
       [](auto& x) { return conv2d_input_grad(x[0], x[1], Shape{2, 2, 5, 4}, 1); }},
      {"conv2d_weight_grad", {{2, 2, 5, 4}, {2, 3, 5, 4}},
       [](auto& x) { return conv2d_weight_grad(x[0], x[1], 3, 1); }},
      {"broadcast_axis", {{3}}, [](auto& x) { return broadcast_axis(x[0], Shape{2, 3, 2}, 1); }},
      {"sum_keep_axis", {{2, 3, 2}}, [](auto& x) { return sum_keep_axis(x[0], 1); }},
      {"sum_all", {{2, 3}}, [](auto& x) { return sum_all(x[0]); }},
      {"broadcast_scalar", {{}}, [](auto& x) { return broadcast_scalar(x[0], Shape{2, 2}); }},
      {"gather", {{6}}, [](auto& x) { return gather(x[0], make_index({5, 0, 0, 3}), Shape{2, 2}); }},
      {"scatter_add", {{4}}, [](auto& x) { return scatter_add(x[0], make_index({5, 0, 0, 3}), Shape{6}); }},
      {"log_softmax", {{3, 4}}, [](auto& x) { return log_softmax(x[0]); }},
      {"reshape", {{2, 6}}, [](auto& x) { return reshape(x[0], Shape{3, 4}); }},
      {"max_pool2", {{2, 2, 5, 4}}, [](auto& x) { return max_pool2(x[0]); }},
      {"batch_norm", {{3, 2, 3, 3}, {2}, {2}},
       [](auto& x) { return batch_norm(x[0], x[1], x[2], 1e-5); }},
  };
  std::uint64_t seed = 7;
  for (const auto& c : cases) check_op(c, seed += 17);
}

TEST_CASE("gradient is linear in the objective") {
  const auto x0 = random_tensor({6}, 5);
  Tape<double> tape;
  const auto x = tape.watch(x0);
  const auto f = sum_all(exp(x));
  const auto g = sum_all(mul(x, mul(x, x)));
  const double a = 0.7, b = -1.3;
  const auto combo = grad(add(scale(f, a), scale(g, b)), std::vector{x})[0];
  const auto gf = grad(f, std::vector{x})[0];
  const auto gg = grad(g, std::vector{x})[0];
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(combo[i] - (a * gf[i] + b * gg[i])) <= 1e-12);
}

TEST_CASE("replaying a recording is bit-identical") {
  auto run = [] {
    Tape<double> tape;
    const auto x = tape.watch(random_tensor({1, 2, 6, 6}, 11));
    const auto w = tape.watch(random_tensor({3, 2, 3, 3}, 12));
    const auto y = max_pool2(relu(conv2d(x, w, 1)));
    const auto loss = sum_all(mul(y, y));
    auto g = grad(loss, std::vector{x, w}, true);
    const auto hv = grad(sum_all(mul(g[1], g[1])), std::vector{w});
    return std::make_tuple(loss, g[0].detach(), hv[0]);
  };
  const auto [l1, gx1, h1] = run();
  const auto [l2, gx2, h2] = run();
  CHECK(l1.same_values(l2));
  CHECK(gx1.same_values(gx2));
  CHECK(h1.same_values(h2));
}

TEST_CASE("relu and max pool subgradient conventions") {
  Tape<double> tape;
  const auto x = tape.watch(Tensor<double>({3}, {-1.0, 0.0, 2.0}));
  CHECK(grad(sum_all(relu(x)), std::vector{x})[0].to_vector() == std::vector<double>{0, 0, 1});

  // all four window entries tie: gradient goes to the first in row-major order
  const auto p = tape.watch(Tensor<double>::filled({1, 1, 2, 2}, 5.0));
  CHECK(grad(sum_all(max_pool2(p)), std::vector{p})[0].to_vector() == std::vector<double>{1, 0, 0, 0});

  // odd spatial size floors
  CHECK(max_pool2(Tensor<double>::zeros({1, 1, 5, 3})).shape() == Shape{1, 1, 2, 1});
}

TEST_CASE("float tensors run the same ops") {
  Tape<float> tape;
  const auto x = tape.watch(Tensor<float>({2}, {1.0f, 2.0f}));
  const auto g = grad(sum_all(mul(x, x)), std::vector{x});
  CHECK(g[0].to_vector() == std::vector<float>{2.0f, 4.0f});
}
