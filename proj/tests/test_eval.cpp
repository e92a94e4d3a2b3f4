#include <doctest.h>

#include <algorithm>
#include <random>

#include "clipvos/eval.hpp"

using namespace clipvos;

namespace {

Bytes square(std::size_t w, std::size_t h, std::size_t x0, std::size_t y0, std::size_t side, std::uint8_t label = 1) {
  Bytes m(w * h, 0);
  for (std::size_t y = y0; y < std::min(h, y0 + side); ++y) {
    for (std::size_t x = x0; x < std::min(w, x0 + side); ++x) m[y * w + x] = label;
  }
  return m;
}

// Boundary matching by explicit nearest-distance search.
double boundary_f_brute(const Bytes& pred, const Bytes& gt, std::size_t w, std::size_t h, std::uint8_t obj,
                        double tol) {
  auto edge = [&](const Bytes& m) {
    std::vector<std::pair<long, long>> pts;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        if (m[y * w + x] != obj) continue;
        const bool border = x == 0 || y == 0 || x + 1 == w || y + 1 == h;
        if (border || m[y * w + x - 1] != obj || m[y * w + x + 1] != obj || m[(y - 1) * w + x] != obj ||
            m[(y + 1) * w + x] != obj) {
          pts.emplace_back(static_cast<long>(x), static_cast<long>(y));
        }
      }
    }
    return pts;
  };
  const auto pb = edge(pred), gb = edge(gt);
  if (pb.empty() && gb.empty()) return 1.0;
  if (pb.empty() || gb.empty()) return 0.0;
  auto matched = [&](const auto& from, const auto& to) {
    std::size_t hit = 0;
    for (const auto& [x, y] : from) {
      for (const auto& [u, v] : to) {
        if (static_cast<double>((x - u) * (x - u) + (y - v) * (y - v)) <= tol * tol) {
          ++hit;
          break;
        }
      }
    }
    return static_cast<double>(hit) / static_cast<double>(from.size());
  };
  const double p = matched(pb, gb), r = matched(gb, pb);
  return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

}  // namespace

TEST_CASE("region J examples") {
  const Bytes a = square(8, 8, 1, 1, 3);
  CHECK(region_j(a, a, 1) == 1.0);
  CHECK(region_j(a, square(8, 8, 5, 5, 3), 1) == 0.0);
  CHECK(region_j(Bytes(64, 0), Bytes(64, 0), 1) == 1.0);
  CHECK(region_j(a, Bytes(64, 0), 1) == 0.0);
  // Nested sets of size 1 and 2.
  Bytes one(4, 0), two(4, 0);
  one[0] = 1;
  two[0] = two[1] = 1;
  CHECK(region_j(one, two, 1) == 0.5);
  CHECK_THROWS(region_j(one, Bytes(5, 0), 1));
}

TEST_CASE("boundary F examples") {
  const std::size_t w = 32, h = 32;
  const Bytes a = square(w, h, 8, 8, 8);
  CHECK(boundary_f(a, a, w, h, 1) == 1.0);
  CHECK(boundary_f(a, square(w, h, 9, 8, 8), w, h, 1, 1) == 1.0);
  CHECK(boundary_f(a, square(w, h, 20, 20, 8), w, h, 1, 1) == 0.0);
  CHECK(boundary_f(a, Bytes(w * h, 0), w, h, 1) == 0.0);
  CHECK(default_boundary_tolerance(64, 64) == 1);
  CHECK(default_boundary_tolerance(854, 480) == 8);
  CHECK_THROWS(boundary_f(a, a, w, h + 1, 1));
}

TEST_CASE("dilation matching equals the nearest-distance oracle") {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> pos(0, 15), side(1, 9), tol(1, 3);
  const std::size_t w = 20, h = 18;
  for (int trial = 0; trial < 100; ++trial) {
    Bytes p = square(w, h, pos(rng), pos(rng), side(rng));
    Bytes g = square(w, h, pos(rng), pos(rng), side(rng));
    // Second blobs make the shapes non-convex.
    const Bytes p2 = square(w, h, pos(rng), pos(rng), side(rng)), g2 = square(w, h, pos(rng), pos(rng), side(rng));
    for (std::size_t i = 0; i < p.size(); ++i) {
      p[i] |= p2[i];
      g[i] |= g2[i];
    }
    const std::size_t t = tol(rng);
    const double got = boundary_f(p, g, w, h, 1, t);
    CHECK(got == doctest::Approx(boundary_f_brute(p, g, w, h, 1, static_cast<double>(t))).epsilon(1e-12));
    CHECK(got >= 0.0);
    CHECK(got <= 1.0);
    CHECK(region_j(p, g, 1) == doctest::Approx(region_j(g, p, 1)));
  }
}

TEST_CASE("J&F aggregation") {
  CHECK(jf_overall({{{1, 1}}, {{1, 1}, {1, 1}}}).jf == 1.0);
  const JFScores single = jf_overall({{{0.6, 0.2}}});
  CHECK(single.jf == doctest::Approx(0.4));
  CHECK(jf_overall({{{1, 0}, {0, 1}}}).jf == 0.5);
  CHECK_THROWS(jf_overall({}));

  std::mt19937_64 rng(37);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<std::vector<ObjectScore>> scores(5);
  for (auto& seq : scores) {
    seq.resize(1 + rng() % 3);
    for (auto& o : seq) o = {u(rng), u(rng)};
  }
  const JFScores base = jf_overall(scores);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(scores.begin(), scores.end(), rng);
    for (auto& seq : scores) std::shuffle(seq.begin(), seq.end(), rng);
    CHECK(jf_overall(scores).jf == doctest::Approx(base.jf).epsilon(1e-12));
  }
}

TEST_CASE("sequence evaluation skips the given frame") {
  VideoSequence gt;
  gt.width = gt.height = 8;
  for (int t = 0; t < 3; ++t) {
    gt.frames.push_back(Bytes(8 * 8 * 3, 0));
    gt.masks.push_back(square(8, 8, 1, 1, 4));
  }
  std::vector<Bytes> pred = gt.masks;
  pred[0] = Bytes(64, 0);
  auto s = evaluate_sequence(pred, gt);
  REQUIRE(s.size() == 1);
  CHECK(s[0].j == 1.0);
  CHECK(s[0].f == 1.0);
  pred[2] = Bytes(64, 0);
  s = evaluate_sequence(pred, gt);
  CHECK(s[0].j == 0.5);
  CHECK_THROWS(evaluate_sequence({pred[0]}, gt));
}
