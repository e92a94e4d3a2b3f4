#include <doctest.h>

#include <cmath>
#include <random>

#include "clipvos/icr.hpp"
#include "oracles.hpp"

using namespace clipvos;
using oracle::random_tensor;
using oracle::window_of;

namespace {

IcrConfig small_config(std::size_t tw, std::size_t sw) {
  IcrConfig c;
  c.num_layers = 2;
  c.width = 6;
  c.temporal_window = tw;
  c.spatial_window = sw;
  return c;
}

}  // namespace

TEST_CASE("window partition counts and identity") {
  std::mt19937_64 rng(1);
  const auto x = random_tensor({4, 8, 8, 3}, rng);
  const auto p = window_partition(x, {2, 4, 4}, {0, 0, 0});
  CHECK(p.windows.shape() == Shape{8, 32, 3});

  const auto whole = window_partition(x, {4, 8, 8}, {0, 0, 0});
  CHECK(whole.windows.dim(0) == 1);
  const auto back = window_reverse(whole.windows, {4, 8, 8}, {4, 8, 8}, {0, 0, 0});
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
}

TEST_CASE("partition and reverse round trip with shift and padding") {
  std::mt19937_64 rng(2);
  const std::vector<std::array<std::size_t, 3>> dims{{3, 5, 7}, {1, 4, 4}, {5, 9, 6}};
  for (const auto& d : dims) {
    const auto x = random_tensor({d[0], d[1], d[2], 2}, rng);
    for (const Extent3 shift : {Extent3{0, 0, 0}, Extent3{1, 1, 1}, Extent3{0, 2, 1}}) {
      if (shift.t >= d[0] || shift.h >= d[1] || shift.w >= d[2]) continue;
      const Extent3 window{2, 3, 3};
      const auto p = window_partition(x, window, shift);
      std::size_t pads = 0;
      for (auto m : p.pad_mask) pads += m;
      CHECK(pads + d[0] * d[1] * d[2] == p.pad_mask.size());
      const auto back = window_reverse(p.windows, {d[0], d[1], d[2]}, window, shift);
      REQUIRE(back.shape() == x.shape());
      for (std::size_t i = 0; i < x.numel(); ++i) CHECK(back.data()[i] == x.data()[i]);
    }
  }
}

TEST_CASE("layer shift alternates and skips covered axes") {
  const ClipGeometry g{4, 16, 16};
  CHECK(layer_shift(g, {2, 7, 7}, 0) == Extent3{0, 0, 0});
  CHECK(layer_shift(g, {2, 7, 7}, 1) == Extent3{1, 3, 3});
  CHECK(layer_shift(g, {2, 7, 7}, 2) == Extent3{0, 0, 0});
  CHECK(layer_shift({2, 16, 5}, {2, 7, 7}, 1) == Extent3{0, 3, 0});
}

TEST_CASE("zero value projection leaves the FFN residual") {
  std::mt19937_64 rng(3);
  ParamRegistry<double> reg(4);
  IcrLayer<double> layer(reg, "l", small_config(2, 3), 5, 4);
  for (double& w : layer.value_proj.weight.mutable_data()) w = 0;
  for (double& b : layer.value_proj.bias.mutable_data()) b = 0;
  const ClipGeometry g{2, 3, 3};
  const auto vq = random_tensor({g.tokens(), 2, 5}, rng);
  const auto k = random_tensor({g.tokens(), 4}, rng);
  const auto out = layer(vq, k, make_window_layout(g, {2, 3, 3}, {0, 0, 0}));
  const auto expect = add(vq, layer.ffn_out(relu(layer.ffn_in(layer.ffn_norm(vq)))));
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("full-extent window equals dense attention") {
  std::mt19937_64 rng(5);
  ParamRegistry<double> reg(6);
  const IcrConfig cfg = small_config(4, 8);
  IcrLayer<double> layer(reg, "l", cfg, 5, 4);
  for (double& w : layer.out_proj.mutable_data()) w = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
  const ClipGeometry g{3, 4, 5};
  const std::size_t n = g.tokens(), k_obj = 2, cv = 5, d = cfg.width;
  const auto vq = random_tensor({n, k_obj, cv}, rng);
  const auto k = random_tensor({n, 4}, rng);
  const auto out = layer(vq, k, make_window_layout(g, {4, 8, 8}, {0, 0, 0}));

  const auto expect = oracle::dense_icr_layer(layer, vq, k, d);
  for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out.data()[i] - expect.data()[i]) <= 1e-5);

  // Proper sub-windows change the result.
  const auto local = layer(vq, k, make_window_layout(g, {2, 2, 2}, {0, 0, 0}));
  double diff = 0;
  for (std::size_t i = 0; i < out.numel(); ++i) diff = std::max(diff, std::abs(out.data()[i] - local.data()[i]));
  CHECK(diff > 1e-6);
}

TEST_CASE("identical local keys give uniform attention") {
  ParamRegistry<double> reg(7);
  IcrLayer<double> layer(reg, "l", small_config(2, 2), 3, 4);
  const ClipGeometry g{2, 4, 4};
  std::vector<double> row{0.3, -0.2, 0.9, 0.1}, k;
  for (std::size_t i = 0; i < g.tokens(); ++i) k.insert(k.end(), row.begin(), row.end());
  const auto a = layer.attention(Tensor<double>({g.tokens(), 4}, k), make_window_layout(g, {2, 2, 2}, {0, 0, 0}));
  for (double v : a.data()) CHECK(v == doctest::Approx(1.0 / 8.0).epsilon(1e-12));
}

TEST_CASE("attention rows over valid positions sum to one") {
  std::mt19937_64 rng(8);
  ParamRegistry<double> reg(9);
  IcrLayer<double> layer(reg, "l", small_config(2, 3), 3, 4);
  const ClipGeometry g{3, 5, 7};
  const auto layout = make_window_layout(g, {2, 3, 3}, {1, 1, 1});
  const auto a = layer.attention(random_tensor({g.tokens(), 4}, rng), layout);
  const std::size_t s = layout.window_size;
  for (std::size_t w = 0; w < layout.num_windows; ++w) {
    for (std::size_t i = 0; i < s; ++i) {
      if (layout.gather[w * s + i] < 0) continue;
      double sum = 0;
      for (std::size_t j = 0; j < s; ++j) {
        const double v = a.data()[(w * s + i) * s + j];
        if (!layout.keep[(w * s + i) * s + j]) CHECK(v == 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1) <= 1e-6);
    }
  }
}

TEST_CASE("unshifted layer has no cross-window influence") {
  std::mt19937_64 rng(10);
  ParamRegistry<double> reg(11);
  IcrLayer<double> layer(reg, "l", small_config(2, 3), 3, 4);
  const ClipGeometry g{4, 6, 6};
  const auto layout = make_window_layout(g, {2, 3, 3}, {0, 0, 0});
  const auto owner = window_of(layout);
  const auto vq = random_tensor({g.tokens(), 2, 3}, rng);
  const auto k = random_tensor({g.tokens(), 4}, rng);
  const auto base = layer(vq, k, layout);
  for (std::size_t token : {std::size_t{0}, std::size_t{40}, std::size_t{143}}) {
    auto vq2 = vq.clone();
    auto k2 = k.clone();
    for (std::size_t c = 0; c < 6; ++c) vq2.mutable_data()[token * 6 + c] += 0.7;
    for (std::size_t c = 0; c < 4; ++c) k2.mutable_data()[token * 4 + c] -= 0.5;
    const auto out = layer(vq2, k2, layout);
    std::size_t changed_inside = 0;
    for (std::size_t t = 0; t < g.tokens(); ++t) {
      bool differs = false;
      for (std::size_t c = 0; c < 6; ++c) differs = differs || out.data()[t * 6 + c] != base.data()[t * 6 + c];
      if (owner[t] != owner[token]) {
        CHECK_FALSE(differs);
      } else {
        changed_inside += differs;
      }
    }
    CHECK(changed_inside > 1);
  }
}

TEST_CASE("single-frame clip reduces to spatial windows") {
  std::mt19937_64 rng(12);
  ParamRegistry<double> reg(13);
  IcrLayer<double> layer(reg, "l", small_config(2, 3), 3, 4);
  const ClipGeometry g{1, 6, 6};
  const auto vq = random_tensor({g.tokens(), 1, 3}, rng);
  const auto k = random_tensor({g.tokens(), 4}, rng);
  const auto a = layer(vq, k, make_window_layout(g, {2, 3, 3}, {0, 0, 0}));
  const auto b = layer(vq, k, make_window_layout(g, {1, 3, 3}, {0, 0, 0}));
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

TEST_CASE("refiner passthrough, validation and shape errors") {
  std::mt19937_64 rng(14);
  ParamRegistry<double> reg(15);
  IntraClipRefiner<double> refiner(reg, small_config(2, 3), 3, 4);
  const ClipGeometry g{2, 4, 4};
  const auto vq = random_tensor({g.tokens(), 2, 3}, rng);
  const auto k = random_tensor({g.tokens(), 4}, rng);
  const auto same = refiner.run_layers(vq, k, g, 0);
  for (std::size_t i = 0; i < vq.numel(); ++i) CHECK(same.data()[i] == vq.data()[i]);
  CHECK(refiner(vq, k, g).shape() == vq.shape());
  CHECK_THROWS_AS(refiner(vq, random_tensor({g.tokens() - 1, 4}, rng), g), ShapeError);

  IcrConfig zero = small_config(2, 3);
  zero.num_layers = 0;
  CHECK_THROWS(zero.validate());
  IcrConfig heads = small_config(2, 3);
  heads.heads = 4;
  CHECK_THROWS(heads.validate());
}

TEST_CASE("multi-head attention with position bias keeps rows normalised") {
  std::mt19937_64 rng(16);
  IcrConfig cfg = small_config(2, 3);
  cfg.heads = 2;
  cfg.position_bias = true;
  ParamRegistry<double> reg(17);
  IcrLayer<double> layer(reg, "l", cfg, 3, 4);
  for (double& b : layer.position_bias.mutable_data()) b = std::uniform_real_distribution<double>(-1, 1)(rng);
  const ClipGeometry g{2, 6, 6};
  const auto layout = make_window_layout(g, {2, 3, 3}, {1, 1, 1}, {2, 3, 3});
  const auto a = layer.attention(random_tensor({g.tokens(), 4}, rng), layout);
  CHECK(a.dim(0) == layout.num_windows * 2);
  const std::size_t s = layout.window_size;
  for (std::size_t r = 0; r < a.dim(0) * s; ++r) {
    double sum = 0;
    for (std::size_t j = 0; j < s; ++j) sum += a.data()[r * s + j];
    // Rows of padded query positions are all zero.
    CHECK((std::abs(sum - 1) <= 1e-6 || sum == 0.0));
  }
}
