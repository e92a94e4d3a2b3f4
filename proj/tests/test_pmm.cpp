#include <doctest.h>

#include <random>

#include "clipvos/pmm.hpp"
#include "oracles.hpp"

using namespace clipvos;
using oracle::random_tensor;

namespace {

struct Fixture {
  static constexpr std::size_t hw = 6, ck = 3, cv = 4;
  std::mt19937_64 rng{21};
  MemoryBank<double> bank;

  explicit Fixture(std::size_t memory_frames) {
    for (std::size_t i = 0; i < memory_frames; ++i) {
      bank.append(random_tensor({hw, ck}, rng, -2, 2), random_tensor({hw, cv}, rng), MemoryTier::permanent);
    }
  }
};

void check_bitwise(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data()[i] == b.data()[i]);
}

}  // namespace

TEST_CASE("one segment is the plain read") {
  Fixture f(2);
  const auto kq = random_tensor({4 * Fixture::hw, Fixture::ck}, f.rng, -2, 2);
  const auto plain = read_bank(kq, f.bank);
  check_bitwise(progressive_read(kq, 4, f.bank, {true, 4}), plain);
  check_bitwise(progressive_read(kq, 4, f.bank, {true, 9}), plain);
  check_bitwise(progressive_read(kq, 4, f.bank, {false, 2}), plain);
}

TEST_CASE("first segment only sees permanent memory") {
  Fixture f(2);
  const std::size_t frames = 6, seg = 2, hw = Fixture::hw;
  const auto kq = random_tensor({frames * hw, Fixture::ck}, f.rng, -2, 2);
  const auto plain = read_bank(kq, f.bank);
  const auto prog = progressive_read(kq, frames, f.bank, {true, seg});
  check_bitwise(slice(prog, 0, 0, seg * hw), slice(plain, 0, 0, seg * hw));
  double diff = 0;
  for (std::size_t i = seg * hw * Fixture::cv; i < prog.numel(); ++i) {
    diff = std::max(diff, std::abs(prog.data()[i] - plain.data()[i]));
  }
  CHECK(diff > 0);
}

TEST_CASE("sequential oracle for L=4, F=2 and L=5, F=2") {
  for (const std::size_t frames : {std::size_t{4}, std::size_t{5}}) {
    Fixture f(2);
    const std::size_t hw = Fixture::hw, seg = 2;
    const auto kq = random_tensor({frames * hw, Fixture::ck}, f.rng, -2, 2);
    const auto oracle = oracle::sequential_pmm(kq, frames, f.bank.keys(), f.bank.values(), seg);
    const auto prog = progressive_read(kq, frames, f.bank, {true, seg});
    REQUIRE(prog.shape() == oracle.shape());
    for (std::size_t i = 0; i < prog.numel(); ++i) CHECK(std::abs(prog.data()[i] - oracle.data()[i]) <= 1e-6);
  }
}

TEST_CASE("permanent memory untouched and temporary empty afterwards") {
  Fixture f(3);
  const auto keys = f.bank.keys(), values = f.bank.values();
  for (std::size_t seg : {1, 2, 3, 7}) {
    const auto kq = random_tensor({7 * Fixture::hw, Fixture::ck}, f.rng);
    progressive_read(kq, 7, f.bank, {true, seg}, 4);
    CHECK(f.bank.temporary_frames() == 0);
    CHECK(f.bank.permanent_frames() == 3);
    check_bitwise(f.bank.keys(), keys);
    check_bitwise(f.bank.values(), values);
  }
}

TEST_CASE("preconditions") {
  Fixture f(1);
  const auto kq = random_tensor({2 * Fixture::hw, Fixture::ck}, f.rng);
  f.bank.append(random_tensor({Fixture::hw, Fixture::ck}, f.rng), random_tensor({Fixture::hw, Fixture::cv}, f.rng),
                MemoryTier::temporary);
  CHECK_THROWS_AS(progressive_read(kq, 2, f.bank, {true, 1}), std::logic_error);

  MemoryBank<double> empty;
  CHECK_THROWS_WITH(progressive_read(kq, 2, empty, {true, 1}), doctest::Contains("memory bank empty"));
  CHECK_THROWS(PmmConfig{true, 0}.validate());
}
