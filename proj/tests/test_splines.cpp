#include <catch2/catch_amalgamated.hpp>

#include "flame/rng.hpp"
#include "flame/splines.hpp"

using namespace flame;

namespace {

// Independent Cox-de Boor recursion over the full basis, 0/0 := 0. Kept
// deliberately naive; the implementation under test uses the local triangular
// scheme instead.
double deboor_oracle(const KnotVector& kv, int k, int degree, double z) {
  const auto& t = kv.knots;
  if (degree == 0) {
    const bool inside = t[k] <= z && z < t[k + 1];
    const bool right_edge = z == kv.domain_hi && t[k] < t[k + 1] && t[k + 1] == kv.domain_hi;
    return (inside || right_edge) ? 1.0 : 0.0;
  }
  double left = 0.0, right = 0.0;
  if (t[k + degree] > t[k]) {
    left = (z - t[k]) / (t[k + degree] - t[k]) * deboor_oracle(kv, k, degree - 1, z);
  }
  if (t[k + degree + 1] > t[k + 1]) {
    right = (t[k + degree + 1] - z) / (t[k + degree + 1] - t[k + 1]) *
            deboor_oracle(kv, k + 1, degree - 1, z);
  }
  return left + right;
}

}  // namespace

TEST_CASE("build_knots basic geometry") {
  const auto kv = build_knots(30, 0.0, 30.0);
  CHECK(kv.size() == 30);
  CHECK(kv.segment_count() == 27);
  CHECK(kv.segment_width() == Catch::Approx(30.0 / 27.0));
  CHECK(kv.knots.size() == 34);
  CHECK(kv.interior_count == 26);

  const auto small = build_knots(6, 0.0, 1.0);
  CHECK(small.segment_count() == 3);
  CHECK(small.segment_width() == Catch::Approx(1.0 / 3.0));
}

TEST_CASE("build_knots rejects bad configurations") {
  CHECK_THROWS_AS(build_knots(5, 0.0, 30.0), config_error);
  CHECK_THROWS_AS(build_knots(30, 10.0, 10.0), config_error);
  CHECK_THROWS_AS(build_knots(30, 5.0, 1.0), config_error);
  CHECK_THROWS_AS(build_knots(30, -1.0, 30.0), config_error);
}

TEST_CASE("partition of unity, nonnegativity, local support") {
  const auto kv = build_knots(30, 0.0, 30.0);
  Rng rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const double z = rng.uniform(0.0, 30.0);
    const Vec b = eval_basis(kv, z);
    CHECK(std::abs(b.sum() - 1.0) <= 1e-10);
    CHECK(b.minCoeff() >= 0.0);
    int nonzero = 0;
    for (int k = 0; k < b.size(); ++k) nonzero += b[k] != 0.0;
    CHECK(nonzero <= 4);
  }
  // domain endpoints included
  CHECK(eval_basis(kv, 0.0).sum() == Catch::Approx(1.0).margin(1e-12));
  CHECK(eval_basis(kv, 30.0).sum() == Catch::Approx(1.0).margin(1e-12));
  CHECK(eval_basis(kv, 0.0)[0] == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("eval_basis agrees with the de Boor recursion oracle") {
  for (const auto& [K, lo, hi] : {std::tuple{6, 0.0, 1.0}, std::tuple{30, 0.0, 30.0}}) {
    const auto kv = build_knots(K, lo, hi);
    for (int g = 0; g <= 1000; ++g) {
      const double z = lo + (hi - lo) * g / 1000.0;
      const Vec b = eval_basis(kv, z);
      for (int k = 0; k < K; ++k) {
        REQUIRE(std::abs(b[k] - deboor_oracle(kv, k, kSplineDegree, z)) <= 1e-10);
      }
    }
  }
}

TEST_CASE("eval_basis refuses out-of-domain points") {
  const auto kv = build_knots(10, 0.0, 30.0);
  CHECK_THROWS_AS(eval_basis(kv, 30.1), extrapolation_error);
  CHECK_THROWS_AS(eval_basis(kv, -0.1), extrapolation_error);
}

TEST_CASE("basis_matrix stacks rows") {
  const auto kv = build_knots(8, 0.0, 10.0);

  SECTION("empty input gives a 0 x K matrix") {
    const Mat m = basis_matrix(kv, {});
    CHECK(m.rows() == 0);
    CHECK(m.cols() == 8);
  }
  SECTION("repeated points give identical rows") {
    const Mat m = basis_matrix(kv, {4.2, 4.2});
    CHECK((m.row(0) - m.row(1)).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("row sums are one") {
    Rng rng(5);
    std::vector<double> zs;
    for (int i = 0; i < 50; ++i) zs.push_back(rng.uniform(0.0, 10.0));
    const Mat m = basis_matrix(kv, zs);
    for (int i = 0; i < m.rows(); ++i) {
      CHECK(std::abs(m.row(i).sum() - 1.0) <= 1e-12);
    }
  }
  SECTION("errors carry the offending index") {
    CHECK_THROWS_WITH(basis_matrix(kv, {1.0, 11.0}),
                      Catch::Matchers::ContainsSubstring("row 1"));
  }
}

TEST_CASE("difference penalty annihilates constants and linears") {
  const int K = 12;
  const auto D = difference_penalty(K);
  CHECK(D.rows.rows() == K - 2);
  CHECK(D.rows.cols() == K);

  Vec ones = Vec::Ones(K), linear(K), quad(K);
  for (int k = 0; k < K; ++k) {
    linear[k] = k;
    quad[k] = static_cast<double>(k) * k;
  }
  CHECK(D.apply(ones).cwiseAbs().maxCoeff() == 0.0);
  CHECK(D.apply(linear).cwiseAbs().maxCoeff() == 0.0);
  const Vec dq = D.apply(quad);
  for (int k = 0; k < dq.size(); ++k) CHECK(dq[k] == 2.0);

  // matrix form matches the stencil
  CHECK((D.rows * quad - dq).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(difference_penalty(2), config_error);
}

TEST_CASE("greville abscissae reproduce linear functions") {
  const auto kv = build_knots(14, 0.0, 30.0);
  const Vec m = greville_abscissae(kv);
  for (int g = 0; g <= 200; ++g) {
    const double z = 30.0 * g / 200.0;
    const Vec b = eval_basis(kv, z);
    CHECK(std::abs(b.dot(m) - z) <= 1e-10);
  }
}
