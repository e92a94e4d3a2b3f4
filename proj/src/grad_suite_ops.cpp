#include <cmath>
#include <random>

#include "clipvos/grad_suite.hpp"
#include "clipvos/ops.hpp"

namespace clipvos {

namespace {

using TD = Tensor<double>;

TD uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  return TD(shape, std::move(v));
}

// Values bounded away from zero so relu kinks stay outside the FD stencil.
TD away_from_zero(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return TD(shape, std::move(v));
}

// sum(op(inputs) * weights) with weights fixed per case.
ScalarFn weighted(std::function<TD(const std::vector<TD>&)> op, TD weights) {
  return [op = std::move(op), weights](const std::vector<TD>& in) {
    return sum(mul(op(in), weights));
  };
}

}  // namespace

std::vector<NamedGradReport> check_core_op_gradients(const GradCheckOptions& options) {
  std::mt19937_64 rng(options.seed);
  std::vector<NamedGradReport> out;
  auto run = [&](const std::string& name, const Shape& out_shape,
                 std::function<TD(const std::vector<TD>&)> op, std::vector<TD> inputs) {
    TD w = uniform(out_shape, rng);
    out.push_back({name, grad_check(weighted(std::move(op), w), std::move(inputs), options)});
  };

  run("matmul", {3, 4}, [](const auto& in) { return matmul(in[0], in[1]); },
      {uniform({3, 5}, rng), uniform({5, 4}, rng)});
  run("matmul_tt", {3, 4}, [](const auto& in) { return matmul(in[0], in[1], true, true); },
      {uniform({5, 3}, rng), uniform({4, 5}, rng)});
  run("bmm", {2, 3, 4}, [](const auto& in) { return bmm(in[0], in[1], false, true); },
      {uniform({2, 3, 5}, rng), uniform({2, 4, 5}, rng)});
  run("add", {2, 3}, [](const auto& in) { return add(in[0], in[1]); },
      {uniform({2, 3}, rng), uniform({2, 3}, rng)});
  run("sub", {2, 3}, [](const auto& in) { return sub(in[0], in[1]); },
      {uniform({2, 3}, rng), uniform({2, 3}, rng)});
  run("mul", {2, 3}, [](const auto& in) { return mul(in[0], in[1]); },
      {uniform({2, 3}, rng), uniform({2, 3}, rng)});
  run("div", {2, 3}, [](const auto& in) { return div(in[0], in[1]); },
      {uniform({2, 3}, rng), uniform({2, 3}, rng, 0.5, 2.0)});
  run("row_matmul", {3, 4}, [](const auto& in) { return row_matmul(in[0], in[1]); },
      {uniform({3, 5}, rng), uniform({5, 4}, rng)});
  run("relu", {4, 3}, [](const auto& in) { return relu(in[0]); }, {away_from_zero({4, 3}, rng)});
  run("sigmoid", {4, 3}, [](const auto& in) { return sigmoid(in[0]); }, {uniform({4, 3}, rng, -3, 3)});
  run("log", {4, 3}, [](const auto& in) { return log(in[0]); }, {uniform({4, 3}, rng, 0.2, 2.0)});
  run("conv2d_s1", {2, 3, 5, 5},
      [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 1); },
      {uniform({2, 2, 5, 5}, rng), uniform({3, 2, 3, 3}, rng), uniform({3}, rng)});
  run("conv2d_s2", {1, 3, 3, 3},
      [](const auto& in) { return conv2d(in[0], in[1], in[2], 2, 1); },
      {uniform({1, 2, 6, 6}, rng), uniform({3, 2, 3, 3}, rng), uniform({3}, rng)});
  run("conv2d_1x1", {2, 4, 3, 3},
      [](const auto& in) { return conv2d(in[0], in[1], in[2], 1, 0); },
      {uniform({2, 3, 3, 3}, rng), uniform({4, 3, 1, 1}, rng), uniform({4}, rng)});
  run("upsample_bilinear_2x", {1, 2, 6, 8}, [](const auto& in) { return upsample_bilinear_2x(in[0]); },
      {uniform({1, 2, 3, 4}, rng)});
  run("softmax_axis1", {3, 4, 2}, [](const auto& in) { return softmax(in[0], 1); },
      {uniform({3, 4, 2}, rng, -2, 2)});
  {
    std::vector<std::uint8_t> keep = {1, 0, 1, 1, 1, 1, 0, 0, 0, 1, 1, 0};
    run("masked_softmax", {3, 4}, [keep](const auto& in) { return masked_softmax(in[0], keep); },
        {uniform({3, 4}, rng, -2, 2)});
  }
  run("layer_norm", {3, 5}, [](const auto& in) { return layer_norm(in[0], in[1], in[2]); },
      {uniform({3, 5}, rng), uniform({5}, rng), uniform({5}, rng)});
  run("linear", {2, 3, 4}, [](const auto& in) { return linear(in[0], in[1], in[2]); },
      {uniform({2, 3, 5}, rng), uniform({4, 5}, rng), uniform({4}, rng)});
  run("concat", {2, 5}, [](const auto& in) { return concat<double>({in[0], in[1]}, 1); },
      {uniform({2, 2}, rng), uniform({2, 3}, rng)});
  run("slice", {2, 2, 3}, [](const auto& in) { return slice(in[0], 1, 1, 3); },
      {uniform({2, 4, 3}, rng)});
  run("reshape", {6, 2}, [](const auto& in) { return reshape(in[0], {6, 2}); },
      {uniform({3, 4}, rng)});
  run("permute", {4, 2, 3}, [](const auto& in) { return permute(in[0], {2, 0, 1}); },
      {uniform({2, 3, 4}, rng)});
  run("sum", {1}, [](const auto& in) { return sum(in[0]); }, {uniform({3, 4}, rng)});
  run("mean", {1}, [](const auto& in) { return mean(in[0]); }, {uniform({3, 4}, rng)});
  run("sum_axis", {3, 2}, [](const auto& in) { return sum_axis(in[0], 1); },
      {uniform({3, 4, 2}, rng)});
  run("gather_rows", {5, 3}, [](const auto& in) { return gather_rows(in[0], {2, -1, 0, 2, 3}); },
      {uniform({4, 3}, rng)});
  run("neg_sq_dist", {4, 5}, [](const auto& in) { return neg_sq_dist(in[0], in[1]); },
      {uniform({4, 3}, rng), uniform({5, 3}, rng)});
  run("soft_aggregate", {3, 2, 4}, [](const auto& in) { return soft_aggregate(in[0]); },
      {uniform({2, 2, 4}, rng, 0.05, 0.95)});
  return out;
}

}  // namespace clipvos
