#include <catch2/catch_amalgamated.hpp>

#include "specband/tensor.hpp"

using namespace specband;

TEST_CASE("tensor shape and data agree") {
  Tensor t({2, 3});
  REQUIRE(t.size() == 6);
  REQUIRE(t.rank() == 2);
  t(1, 2) = 5.0f;
  REQUIRE(t[5] == 5.0f);

  REQUIRE_THROWS_AS(Tensor({2, 0}), ShapeError);
  REQUIRE_THROWS_AS(Tensor({1, 2, 3}, {1.0f, 2.0f}), ShapeError);
  REQUIRE_THROWS_AS(Tensor(std::vector<int>{}), ShapeError);
}

TEST_CASE("rank-3 indexing is row-major") {
  Tensor t({2, 3, 4});
  t(1, 2, 3) = 9.0f;
  REQUIRE(t[1 * 12 + 2 * 4 + 3] == 9.0f);
}

TEST_CASE("param accumulators start at zero with matching shapes") {
  Param p({3, 4});
  REQUIRE(p.value.same_shape(p.grad));
  REQUIRE(p.value.same_shape(p.m));
  REQUIRE(p.value.same_shape(p.v));
  for (long long i = 0; i < p.size(); ++i) {
    REQUIRE(p.m[i] == 0.0f);
    REQUIRE(p.v[i] == 0.0f);
  }
}

TEST_CASE("non-finite values are detectable") {
  Tensor t({2});
  REQUIRE(t.all_finite());
  t[0] = std::numeric_limits<float>::quiet_NaN();
  REQUIRE_FALSE(t.all_finite());
  t[0] = std::numeric_limits<float>::infinity();
  REQUIRE_FALSE(t.all_finite());
}

TEST_CASE("rng streams are deterministic and shuffles are stable") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());

  std::vector<int> v1{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> v2 = v1;
  Rng r1(7), r2(7);
  r1.shuffle(v1.begin(), v1.end());
  r2.shuffle(v2.begin(), v2.end());
  REQUIRE(v1 == v2);
}
