#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include "sleepssl/augment.hpp"
#include "sleepssl/rng.hpp"

using namespace sleepssl;
using namespace sleepssl::aug;

namespace {

Tensor batch_of(std::vector<float> vals, int64_t n, int64_t len) {
  return Tensor({n, len}, std::move(vals));
}

std::multiset<float> value_multiset(const Tensor& t, int64_t row) {
  std::multiset<float> out;
  for (int64_t i = 0; i < t.dim(1); ++i) out.insert(t.at2(row, i));
  return out;
}

}  // namespace

TEST_CASE("add_noise: seeded gaussian with the configured spread") {
  Tensor x({100, 1000}, 0.0f);
  SUBCASE("sample std over 1e5 draws is 0.8 +- 0.02") {
    Tensor y = add_noise(x, 0.8, 999);
    double mean = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) mean += y[i];
    mean /= static_cast<double>(y.numel());
    double var = 0.0;
    for (int64_t i = 0; i < y.numel(); ++i) var += (y[i] - mean) * (y[i] - mean);
    var /= static_cast<double>(y.numel() - 1);
    CHECK(std::sqrt(var) == doctest::Approx(0.8).epsilon(0.025));
    CHECK(std::abs(mean) < 0.02);
  }
  SUBCASE("same seed twice gives identical output") {
    Tensor a = add_noise(x, 0.8, 4);
    Tensor b = add_noise(x, 0.8, 4);
    for (int64_t i = 0; i < 100; ++i) CHECK(a[i] == b[i]);
    Tensor c = add_noise(x, 0.8, 5);
    CHECK(a[0] != c[0]);
  }
  SUBCASE("sigma must be positive") {
    CHECK_THROWS(add_noise(x, 0.0, 1));
    CHECK_THROWS(add_noise(x, -0.5, 1));
  }
}

TEST_CASE("time_shift_rotate moves the final fraction to the front") {
  SUBCASE("five-sample example at 20%") {
    Tensor x = batch_of({1, 2, 3, 4, 5}, 1, 5);
    Tensor y = time_shift_rotate(x, 0.2);
    CHECK(y.at2(0, 0) == 5);
    CHECK(y.at2(0, 1) == 1);
    CHECK(y.at2(0, 2) == 2);
    CHECK(y.at2(0, 3) == 3);
    CHECK(y.at2(0, 4) == 4);
  }
  SUBCASE("rotating by f then 1-f returns the original") {
    Rng rng(3);
    for (int trial = 0; trial < 30; ++trial) {
      const int64_t len = rng.uniform_int(4, 60);
      Tensor x({2, len});
      for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
      const double f = rng.uniform(0.05f, 0.95f);
      Tensor y = time_shift_rotate(time_shift_rotate(x, f), 1.0 - f);
      for (int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
    }
  }
  SUBCASE("multiset of values preserved") {
    Rng rng(5);
    Tensor x({3, 17});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    Tensor y = time_shift_rotate(x, 0.37);
    for (int64_t r = 0; r < 3; ++r) CHECK(value_multiset(x, r) == value_multiset(y, r));
  }
  SUBCASE("fraction bounds") {
    Tensor x = batch_of({1, 2, 3, 4}, 1, 4);
    CHECK_THROWS(time_shift_rotate(x, 0.0));
    CHECK_THROWS(time_shift_rotate(x, 1.0));
    CHECK_THROWS(time_shift_rotate(x, -0.2));
  }
}

TEST_CASE("negate is an elementwise involution") {
  Tensor x = batch_of({1.0f, -2.0f}, 1, 2);
  Tensor y = negate(x);
  CHECK(y.at2(0, 0) == -1.0f);
  CHECK(y.at2(0, 1) == 2.0f);
  Tensor z = negate(negate(x));
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(z[i] == x[i]);
  Tensor zeros({2, 4}, 0.0f);
  Tensor nz = negate(zeros);
  for (int64_t i = 0; i < nz.numel(); ++i) CHECK(nz[i] == 0.0f);
}

TEST_CASE("permute_segments shuffles contiguous chunks per signal") {
  SUBCASE("length 10 with 5 segments: chunks of 2 stay glued") {
    Tensor x = batch_of({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, 1, 10);
    Tensor y = permute_segments(x, 5, 21);
    // Each output pair (2k, 2k+1) must be one of the original chunks.
    for (int64_t c = 0; c < 5; ++c) {
      const float a = y.at2(0, 2 * c), b = y.at2(0, 2 * c + 1);
      CHECK(b == a + 1);
      CHECK(static_cast<int64_t>(a) % 2 == 0);
    }
    CHECK(value_multiset(x, 0) == value_multiset(y, 0));
  }
  SUBCASE("multiset preserved on random input") {
    Rng rng(9);
    Tensor x({4, 23});
    for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();
    Tensor y = permute_segments(x, 5, 3);
    for (int64_t r = 0; r < 4; ++r) CHECK(value_multiset(x, r) == value_multiset(y, r));
  }
  SUBCASE("some seed yields the identity permutation on a 3-segment toy") {
    Tensor x = batch_of({0, 1, 2, 3, 4, 5}, 1, 6);
    bool found_identity = false, found_other = false;
    for (uint64_t seed = 0; seed < 64 && !(found_identity && found_other); ++seed) {
      Tensor y = permute_segments(x, 3, seed);
      bool same = true;
      for (int64_t i = 0; i < 6; ++i) same = same && y[i] == x[i];
      (same ? found_identity : found_other) = true;
    }
    CHECK(found_identity);  // identity permutation occurs for some seed
    CHECK(found_other);
  }
  SUBCASE("per-signal permutations are independent") {
    Tensor x({8, 12});
    for (int64_t r = 0; r < 8; ++r)
      for (int64_t i = 0; i < 12; ++i) x.at2(r, i) = static_cast<float>(i);
    Tensor y = permute_segments(x, 4, 17);
    std::set<std::vector<float>> distinct;
    for (int64_t r = 0; r < 8; ++r) {
      std::vector<float> row(y.data() + r * 12, y.data() + (r + 1) * 12);
      distinct.insert(row);
    }
    CHECK(distinct.size() > 1);
  }
  SUBCASE("segment count bounds") {
    Tensor x = batch_of({1, 2, 3, 4}, 1, 4);
    CHECK_THROWS(permute_segments(x, 1, 0));
    CHECK_THROWS(permute_segments(x, 5, 0));
  }
}

TEST_CASE("make_view_pair") {
  Rng rng(33);
  Tensor x({6, 40});
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = rng.normal();

  for (ViewMode mode : {ViewMode::SimClr, ViewMode::TsTcc}) {
    ViewPair vp = make_view_pair(x, mode, 77);
    CHECK(vp.view_a.same_shape(x));
    CHECK(vp.view_b.same_shape(x));
    bool differ = false;
    for (int64_t i = 0; i < x.numel() && !differ; ++i) differ = vp.view_a[i] != vp.view_b[i];
    CHECK(differ);
    CHECK(!vp.recipe_a.empty());
    CHECK(!vp.recipe_b.empty());
    for (int64_t i = 0; i < x.numel(); ++i) {
      CHECK(std::isfinite(vp.view_a[i]));
      CHECK(std::isfinite(vp.view_b[i]));
    }
    ViewPair again = make_view_pair(x, mode, 77);
    for (int64_t i = 0; i < x.numel(); ++i) {
      CHECK(again.view_a[i] == vp.view_a[i]);
      CHECK(again.view_b[i] == vp.view_b[i]);
    }
    ViewPair other = make_view_pair(x, mode, 78);
    CHECK(other.view_a[0] != vp.view_a[0]);
  }
  CHECK_THROWS(view_mode_from_string("unknown"));
}

TEST_CASE("pseudo-label mapping over the four kinds is a bijection") {
  std::map<std::string, int> seen;
  for (int k = 0; k < kNumKinds; ++k)
    seen[kind_name(static_cast<Kind>(k))] = k;
  CHECK(seen.size() == static_cast<size_t>(kNumKinds));
  CHECK(seen.at("noise") == 0);
  CHECK(seen.at("time_shift") == 1);
  CHECK(seen.at("negate") == 2);
  CHECK(seen.at("permute") == 3);
}
