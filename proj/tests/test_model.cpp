#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "flame/model.hpp"
#include "flame/rng.hpp"

using namespace flame;

namespace {

Dataset random_dataset(int I, int max_episodes, double dur_hi, std::uint64_t seed) {
  Dataset ds;
  ds.covariate_names = {"intercept", "x1"};
  Rng rng(seed);
  for (int i = 0; i < I; ++i) {
    SubjectRecord s;
    s.id = "s" + std::to_string(i);
    s.x = {1.0, rng.normal()};
    const int J = rng.uniform_int(0, max_episodes);
    for (int j = 0; j < J; ++j) {
      s.episodes.push_back({dur_hi * rng.uniform_pos(), rng.uniform(0.0, 100.0)});
    }
    s.y = rng.uniform() < 0.4 ? 1 : 0;
    ds.subjects.push_back(std::move(s));
  }
  return ds;
}

ParameterVector random_params(int p, int K, Rng& rng) {
  ParameterVector pv;
  pv.beta = Vec::NullaryExpr(p, [&](Eigen::Index) { return rng.normal(); });
  pv.gamma = Vec::NullaryExpr(K, [&](Eigen::Index) { return rng.normal(); });
  pv.gamma[0] = std::abs(pv.gamma[0]) * 1e-3;
  pv.gamma[1] = std::abs(pv.gamma[1]);
  pv.tau = std::exp(rng.normal());
  return pv;
}

// Naive probability-product likelihood, evaluated episode by episode with the
// dense basis and explicit Bernoulli factors.
double likelihood_oracle(const ParameterVector& pv, const Dataset& ds,
                         const KnotVector& kv) {
  double ll = 0.0;
  for (const auto& s : ds.subjects) {
    double eta = 0.0;
    for (std::size_t j = 0; j < s.x.size(); ++j) eta += s.x[j] * pv.beta[j];
    for (const auto& e : s.episodes) eta += eval_basis(kv, e.duration).dot(pv.gamma);
    const double p = 1.0 / (1.0 + std::exp(-eta));
    ll += std::log(s.y == 1 ? p : 1.0 - p);
  }
  return ll;
}

// Term-by-term prior oracle using raw density formulas.
double prior_oracle(const ParameterVector& pv, const ModelSpec& spec) {
  auto normal_ld = [](double x, double sd) {
    return std::log(1.0 / (sd * std::sqrt(2.0 * M_PI)) *
                    std::exp(-x * x / (2.0 * sd * sd)));
  };
  double lp = 0.0;
  for (int k = 0; k + 2 < spec.K; ++k) {
    const double d = pv.gamma[k + 2] - 2.0 * pv.gamma[k + 1] + pv.gamma[k];
    lp += normal_ld(d, pv.tau);
  }
  lp += std::log(2.0) + normal_ld(pv.gamma[0], spec.gamma1_prior_sd);
  lp += std::log(2.0) + normal_ld(pv.gamma[1], spec.gamma2_prior_sd);
  const double s = spec.tau_cauchy_scale;
  lp += std::log(2.0 / (M_PI * s * (1.0 + pv.tau * pv.tau / (s * s))));
  for (int j = 0; j < pv.beta.size(); ++j) lp += normal_ld(pv.beta[j], spec.beta_prior_sd);
  return lp;
}

}  // namespace

TEST_CASE("aggregate_design sums basis rows over episodes") {
  const auto kv = build_knots(10, 0.0, 70.0);
  Dataset ds;
  ds.covariate_names = {"intercept"};
  SubjectRecord none{"none", 0, {1.0}, {}};
  SubjectRecord two{"two", 1, {1.0}, {{1.0, 0.0}, {60.0, 10.0}}};
  SubjectRecord sixty{"sixty", 0, {1.0}, {}};
  for (int j = 0; j < 60; ++j) sixty.episodes.push_back({1.0, static_cast<double>(j)});
  ds.subjects = {none, two, sixty};

  const auto agg = aggregate_design(ds, kv);
  CHECK(agg.B.row(0).cwiseAbs().maxCoeff() == 0.0);

  const Vec expect_two = eval_basis(kv, 1.0) + eval_basis(kv, 60.0);
  CHECK((agg.B.row(1).transpose() - expect_two).cwiseAbs().maxCoeff() <= 1e-14);

  const Vec expect_sixty = 60.0 * eval_basis(kv, 1.0);
  CHECK((agg.B.row(2).transpose() - expect_sixty).cwiseAbs().maxCoeff() <= 1e-12);

  // row sums count episodes
  CHECK(agg.B.row(1).sum() == Catch::Approx(2.0).margin(1e-12));
  CHECK(agg.B.row(2).sum() == Catch::Approx(60.0).margin(1e-12));
  CHECK(agg.total_durations[2] == Catch::Approx(60.0));
}

TEST_CASE("aggregate_design names the offending subject and episode") {
  const auto kv = build_knots(10, 0.0, 30.0);
  Dataset ds;
  ds.covariate_names = {"intercept"};
  ds.subjects = {{"ok", 0, {1.0}, {{5.0, 0.0}}},
                 {"bad", 1, {1.0}, {{5.0, 0.0}, {31.0, 10.0}}}};
  CHECK_THROWS_WITH(aggregate_design(ds, kv),
                    Catch::Matchers::ContainsSubstring("bad") &&
                        Catch::Matchers::ContainsSubstring("episode 2"));
}

TEST_CASE("log likelihood: zero parameters give n log(1/2)") {
  const auto kv = build_knots(8, 0.0, 30.0);
  const auto ds = random_dataset(23, 5, 30.0, 9);
  const auto agg = aggregate_design(ds, kv);
  ParameterVector pv;
  pv.beta = Vec::Zero(2);
  pv.gamma = Vec::Zero(8);
  pv.tau = 1.0;
  CHECK(log_likelihood(pv, agg) == Catch::Approx(23.0 * std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("log likelihood: gamma = 0 makes episodes invisible") {
  const auto kv = build_knots(8, 0.0, 30.0);
  auto ds = random_dataset(17, 6, 30.0, 11);
  auto stripped = ds;
  for (auto& s : stripped.subjects) s.episodes.clear();
  Rng rng(3);
  ParameterVector pv;
  pv.beta = Vec::NullaryExpr(2, [&](Eigen::Index) { return rng.normal(); });
  pv.gamma = Vec::Zero(8);
  pv.tau = 0.7;
  const auto agg = aggregate_design(ds, kv);
  const auto agg0 = aggregate_design(stripped, kv);
  CHECK(log_likelihood(pv, agg) == Catch::Approx(log_likelihood(pv, agg0)).epsilon(1e-14));
}

TEST_CASE("log likelihood matches the probability-product oracle") {
  const auto kv = build_knots(6, 0.0, 30.0);
  const auto ds = random_dataset(5, 4, 30.0, 21);
  const auto agg = aggregate_design(ds, kv);
  Rng rng(77);
  for (int rep = 0; rep < 10; ++rep) {
    const auto pv = random_params(2, 6, rng);
    CHECK(std::abs(log_likelihood(pv, agg) - likelihood_oracle(pv, ds, kv)) <= 1e-10);
  }
}

TEST_CASE("log prior matches the term-by-term oracle") {
  ModelSpec spec;
  spec.K = 9;
  const auto D = difference_penalty(spec.K);
  Rng rng(123);
  for (int rep = 0; rep < 20; ++rep) {
    const auto pv = random_params(3, spec.K, rng);
    CHECK(std::abs(log_prior(pv, spec, D) - prior_oracle(pv, spec)) <= 1e-10);
  }
}

TEST_CASE("log prior RW2 block at the penalty nullspace") {
  ModelSpec spec;
  spec.K = 12;
  const auto D = difference_penalty(spec.K);
  const Vec m = Vec::LinSpaced(spec.K, 0.0, 11.0);

  ParameterVector pv;
  pv.beta = Vec::Zero(1);
  pv.gamma = 0.05 * m;  // linear in k and gamma[0] = 0: D gamma vanishes
  pv.tau = 0.4;

  auto rw2_only = [&](double tau) {
    ParameterVector q = pv;
    q.tau = tau;
    const double full = log_prior(q, spec, D);
    double rest = std::log(2.0) + detail::log_normal_pdf(q.gamma[0], spec.gamma1_prior_sd);
    rest += std::log(2.0) + detail::log_normal_pdf(q.gamma[1], spec.gamma2_prior_sd);
    rest += detail::log_half_cauchy_pdf(tau, spec.tau_cauchy_scale);
    rest += detail::log_normal_pdf(q.beta[0], spec.beta_prior_sd);
    return full - rest;
  };

  const int K = spec.K;
  const double expect = (K - 2) * detail::log_normal_pdf(0.0, pv.tau);
  CHECK(rw2_only(pv.tau) == Catch::Approx(expect).epsilon(1e-12));
  // doubling tau with D gamma = 0 costs exactly (K-2) log 2
  CHECK(rw2_only(pv.tau) - rw2_only(2.0 * pv.tau) ==
        Catch::Approx((K - 2) * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("log prior strictly decreases as the penalty grows") {
  ModelSpec spec;
  spec.K = 10;
  const auto D = difference_penalty(spec.K);
  ParameterVector pv;
  pv.beta = Vec::Zero(1);
  pv.gamma = Vec::Zero(spec.K);
  pv.gamma[0] = 1e-4;
  pv.gamma[1] = 0.1;
  pv.tau = 0.5;
  double prev = log_prior(pv, spec, D);
  for (double bend : {0.1, 0.5, 1.5, 4.0}) {
    auto q = pv;
    q.gamma[5] += bend;  // kinks the sequence, growing ||D gamma||
    const double lp = log_prior(q, spec, D);
    CHECK(lp < prev);
    prev = lp;
  }
}

TEST_CASE("GLM embedding: linear-in-Greville gamma reduces to total duration") {
  const auto kv = build_knots(30, 0.0, 30.0);
  const auto ds = random_dataset(40, 8, 30.0, 31);
  const auto agg = aggregate_design(ds, kv);
  const Vec m = greville_abscissae(kv);
  const double c = 0.37;
  const Vec bg = agg.B * (c * m);
  CHECK((bg - c * agg.total_durations).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("parameter map round trips") {
  ModelSpec spec;
  spec.K = 7;
  Rng rng(55);
  for (bool anchored : {true, false}) {
    spec.anchor_nonnegative = anchored;
    const ParameterMap map(2, spec);
    for (int rep = 0; rep < 20; ++rep) {
      auto pv = random_params(2, spec.K, rng);
      if (!anchored) pv.gamma[0] = rng.normal();
      const Vec u = map.unconstrain(pv);
      const auto back = map.constrain(u);
      CHECK((back.beta - pv.beta).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK((back.gamma - pv.gamma).cwiseAbs().maxCoeff() <= 1e-12);
      CHECK(std::abs(back.tau - pv.tau) <= 1e-12 * pv.tau);
      CHECK(back.tau > 0.0);
    }
  }
}

TEST_CASE("unconstrained gradient matches central finite differences") {
  const auto kv = build_knots(6, 0.0, 30.0);
  const auto ds = random_dataset(12, 5, 30.0, 41);
  const auto agg = aggregate_design(ds, kv);
  ModelSpec spec;
  spec.K = 6;

  for (bool anchored : {true, false}) {
    spec.anchor_nonnegative = anchored;
    const LogPosterior target(agg, spec);
    Rng rng(anchored ? 7u : 8u);
    const double h = 1e-5;
    for (int rep = 0; rep < 20; ++rep) {
      Vec u = Vec::NullaryExpr(target.dim(),
                               [&](Eigen::Index) { return rng.uniform(-1.5, 1.5); });
      Vec grad(target.dim());
      target.value_and_gradient(u, grad);
      for (int i = 0; i < target.dim(); ++i) {
        Vec up = u, dn = u;
        up[i] += h;
        dn[i] -= h;
        const double fd = (target.value(up) - target.value(dn)) / (2.0 * h);
        const double scale = std::max({1.0, std::abs(fd), std::abs(grad[i])});
        REQUIRE(std::abs(grad[i] - fd) / scale <= 1e-5);
      }
    }
  }
}

TEST_CASE("posterior is invariant to episode order and episode splitting") {
  const auto kv = build_knots(8, 0.0, 30.0);
  auto ds = random_dataset(15, 7, 30.0, 61);
  ModelSpec spec;
  spec.K = 8;

  auto shuffled = ds;
  Rng rng(99);
  for (auto& s : shuffled.subjects) {
    for (std::size_t j = s.episodes.size(); j > 1; --j) {
      std::swap(s.episodes[j - 1],
                s.episodes[static_cast<std::size_t>(
                    rng.uniform_int(0, static_cast<int>(j) - 1))]);
    }
  }

  const auto agg = aggregate_design(ds, kv);
  const auto agg_shuffled = aggregate_design(shuffled, kv);

  // splitting episode lists across two aggregations and summing B rows
  auto first_half = ds, second_half = ds;
  for (std::size_t i = 0; i < ds.subjects.size(); ++i) {
    auto& eps = ds.subjects[i].episodes;
    const auto half = static_cast<std::ptrdiff_t>(eps.size() / 2);
    first_half.subjects[i].episodes.assign(eps.begin(), eps.begin() + half);
    second_half.subjects[i].episodes.assign(eps.begin() + half, eps.end());
  }
  auto agg_split = aggregate_design(first_half, kv);
  agg_split.B += aggregate_design(second_half, kv).B;

  const LogPosterior t1(agg, spec), t2(agg_shuffled, spec), t3(agg_split, spec);
  Rng prng(17);
  for (int rep = 0; rep < 10; ++rep) {
    const Vec u =
        Vec::NullaryExpr(t1.dim(), [&](Eigen::Index) { return prng.uniform(-1.0, 1.0); });
    const double v1 = t1.value(u);
    CHECK(std::abs(t2.value(u) - v1) <= 1e-12 * std::max(1.0, std::abs(v1)));
    CHECK(std::abs(t3.value(u) - v1) <= 1e-12 * std::max(1.0, std::abs(v1)));
  }
}

TEST_CASE("log posterior rejects non-finite input with the parameter index") {
  const auto kv = build_knots(6, 0.0, 30.0);
  const auto ds = random_dataset(5, 3, 30.0, 71);
  const auto agg = aggregate_design(ds, kv);
  ModelSpec spec;
  spec.K = 6;
  const LogPosterior target(agg, spec);
  Vec u = Vec::Zero(target.dim());
  u[3] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH(target.value(u), Catch::Matchers::ContainsSubstring("index 3"));
}

TEST_CASE("dataset validation") {
  Dataset ds;
  ds.covariate_names = {"intercept"};
  CHECK_THROWS_AS(validate_dataset(ds), data_error);

  ds.subjects = {{"a", 1, {1.0}, {}}, {"b", 1, {1.0}, {}}};
  CHECK_FALSE(validate_dataset(ds).empty());  // all outcomes identical -> warning

  ds.subjects[1].y = 0;
  CHECK(validate_dataset(ds).empty());

  ds.subjects[1].x = {1.0, 2.0};
  CHECK_THROWS_AS(validate_dataset(ds), data_error);

  ds.subjects[1].x = {1.0};
  ds.subjects[1].episodes.push_back({0.0, 1.0});
  CHECK_THROWS_AS(validate_dataset(ds), data_error);
}
