#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "flame/diagnostics.hpp"
#include "flame/rng.hpp"
#include "flame/sampler.hpp"

using namespace flame;

namespace {

struct DiagGaussian {
  Vec mu;
  Vec sd;
  int dim() const { return static_cast<int>(mu.size()); }
  double value_and_gradient(const Vec& u, Vec& grad) const {
    const Vec z = (u - mu).cwiseQuotient(sd);
    grad = -z.cwiseQuotient(sd);
    return -0.5 * z.squaredNorm();
  }
};

struct CorrGaussian2d {
  double rho;
  int dim() const { return 2; }
  double value_and_gradient(const Vec& u, Vec& grad) const {
    const double det = 1.0 - rho * rho;
    grad.resize(2);
    grad[0] = -(u[0] - rho * u[1]) / det;
    grad[1] = -(u[1] - rho * u[0]) / det;
    return 0.5 * (grad[0] * u[0] + grad[1] * u[1]);
  }
};

struct NeverFinite {
  int dim() const { return 2; }
  double value_and_gradient(const Vec&, Vec& grad) const {
    grad = Vec::Zero(2);
    return -std::numeric_limits<double>::infinity();
  }
};

}  // namespace

TEST_CASE("standard gaussian target is recovered") {
  DiagGaussian target{Vec::Zero(5), Vec::Ones(5)};
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 500;
  cfg.samples = 1000;
  cfg.seed = 42;
  const auto draws = sample(target, cfg);
  REQUIRE(draws.total_draws() == 4000);
  const auto diag = diagnose(draws);

  for (int j = 0; j < 5; ++j) {
    std::vector<double> pooled;
    for (int c = 0; c < 4; ++c) {
      const Vec col = draws.parameter(c, j);
      pooled.insert(pooled.end(), col.data(), col.data() + col.size());
    }
    double mean = 0.0;
    for (double v : pooled) mean += v;
    mean /= pooled.size();
    double var = 0.0;
    for (double v : pooled) var += (v - mean) * (v - mean);
    var /= (pooled.size() - 1.0);

    const double mcse = std::sqrt(var / diag.params[j].ess_bulk);
    CHECK(std::abs(mean) <= 3.0 * mcse);
    CHECK(var >= 0.9);
    CHECK(var <= 1.1);
    CHECK(diag.params[j].rhat < 1.01);
  }
  CHECK(draws.divergent_fraction() < 0.05);
}

TEST_CASE("same seed gives bit-identical draws; chains differ") {
  DiagGaussian target{Vec::Zero(3), Vec::Ones(3)};
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 200;
  cfg.samples = 100;
  cfg.seed = 7;
  const auto a = sample(target, cfg);
  const auto b = sample(target, cfg);
  for (int c = 0; c < 2; ++c) {
    REQUIRE((a.chains[c].draws - b.chains[c].draws).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(a.chains[c].final_step_size == b.chains[c].final_step_size);
  }
  CHECK((a.chains[0].draws - a.chains[1].draws).cwiseAbs().maxCoeff() > 0.0);

  cfg.seed = 8;
  const auto c = sample(target, cfg);
  CHECK((a.chains[0].draws - c.chains[0].draws).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("draws are identical no matter the thread count") {
  DiagGaussian target{Vec::Zero(4), Vec::Ones(4)};
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 150;
  cfg.samples = 200;
  cfg.seed = 99;
  cfg.threads = 1;
  const auto serial = sample(target, cfg);
  cfg.threads = 4;
  const auto parallel = sample(target, cfg);
  for (int c = 0; c < 4; ++c) {
    REQUIRE((serial.chains[c].draws - parallel.chains[c].draws).cwiseAbs().maxCoeff() ==
            0.0);
  }
}

TEST_CASE("step size adapts down for a tight target") {
  DiagGaussian target{Vec::Zero(1), Vec::Constant(1, 1e-3)};
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 400;
  cfg.samples = 400;
  cfg.seed = 11;
  cfg.adapt_mass_matrix = false;  // unit metric: the step must carry the scale
  const auto draws = sample(target, cfg);
  for (const auto& chain : draws.chains) {
    CHECK(chain.final_step_size < 1e-2);
  }
  CHECK_FALSE(draws.unhealthy_divergences);
  // and it still explores: pooled sd near the 1e-3 scale
  double var = 0.0, mean = 0.0;
  long n = 0;
  for (const auto& chain : draws.chains) {
    for (Eigen::Index s = 0; s < chain.draws.rows(); ++s) {
      mean += chain.draws(s, 0);
      ++n;
    }
  }
  mean /= n;
  for (const auto& chain : draws.chains) {
    for (Eigen::Index s = 0; s < chain.draws.rows(); ++s) {
      var += (chain.draws(s, 0) - mean) * (chain.draws(s, 0) - mean);
    }
  }
  var /= (n - 1.0);
  CHECK(std::sqrt(var) == Catch::Approx(1e-3).epsilon(0.35));
}

TEST_CASE("correlated gaussian: detailed-balance smoke") {
  CorrGaussian2d target{0.8};
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.warmup = 500;
  cfg.samples = 2000;
  cfg.seed = 5;
  const auto draws = sample(target, cfg);
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  long n = 0;
  for (const auto& chain : draws.chains) {
    for (Eigen::Index s = 0; s < chain.draws.rows(); ++s) {
      const double x = chain.draws(s, 0), y = chain.draws(s, 1);
      sx += x;
      sy += y;
      sxx += x * x;
      syy += y * y;
      sxy += x * y;
      ++n;
    }
  }
  const double corr = (sxy - sx * sy / n) /
                      std::sqrt((sxx - sx * sx / n) * (syy - sy * sy / n));
  CHECK(std::abs(corr - 0.8) <= 0.05);
}

TEST_CASE("oversized fixed step flags an unhealthy run but still returns draws") {
  DiagGaussian target{Vec::Zero(2), Vec::Constant(2, 1e-4)};
  SamplerConfig cfg;
  cfg.chains = 2;
  cfg.warmup = 0;
  cfg.samples = 200;
  cfg.seed = 3;
  cfg.adapt_step_size = false;
  cfg.adapt_mass_matrix = false;
  cfg.init_step_size = 5.0;  // hopeless for an sd 1e-4 target
  const auto draws = sample(target, cfg);
  CHECK(draws.total_draws() == 400);
  CHECK(draws.divergent_fraction() > 0.25);
  CHECK(draws.unhealthy_divergences);
}

TEST_CASE("non-finite density at the supplied init is an immediate error") {
  NeverFinite target;
  SamplerConfig cfg;
  cfg.chains = 1;
  cfg.warmup = 100;
  cfg.samples = 10;
  CHECK_THROWS_AS(sample(target, cfg, Vec(Vec::Zero(2))), config_error);
  // and the jittered search also gives up
  CHECK_THROWS_AS(sample(target, cfg), config_error);
}

TEST_CASE("tree depth respects the cap") {
  DiagGaussian target{Vec::Zero(2), Vec::Ones(2)};
  SamplerConfig cfg;
  cfg.chains = 1;
  cfg.warmup = 100;
  cfg.samples = 50;
  cfg.max_tree_depth = 3;
  cfg.seed = 21;
  const auto draws = sample(target, cfg);
  for (int d : draws.chains[0].tree_depth) CHECK(d <= 3);
}

TEST_CASE("sampler configuration validation") {
  DiagGaussian target{Vec::Zero(1), Vec::Ones(1)};
  SamplerConfig cfg;
  cfg.chains = 0;
  CHECK_THROWS_AS(sample(target, cfg), config_error);
  cfg = SamplerConfig{};
  cfg.warmup = 50;  // adaptation on but warmup too short
  CHECK_THROWS_AS(sample(target, cfg), config_error);
  cfg = SamplerConfig{};
  cfg.target_accept = 1.5;
  CHECK_THROWS_AS(sample(target, cfg), config_error);
}
