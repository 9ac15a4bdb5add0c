#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "flame/common.hpp"
#include "flame/fit.hpp"
#include "flame/model.hpp"
#include "flame/sampler.hpp"
#include "flame/splines.hpp"

namespace flame {

/// Posterior summary of the risk accumulation function on a duration grid.
struct RafEstimate {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<double> lower;
  std::vector<double> upper;
  double level = 0.95;
};

struct Scenario {
  std::string label;
  std::vector<double> episode_durations;
  Vec covariate_profile;
};

struct IntervalSummary {
  double mean = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct ScenarioSummary {
  std::string label;
  IntervalSummary probability;
};

/// Per-scenario event probabilities plus the posterior of their difference.
struct ContrastResult {
  ScenarioSummary a;
  ScenarioSummary b;
  IntervalSummary difference;  // p(b) - p(a), draw by draw
};

namespace detail {

inline IntervalSummary summarize(std::vector<double> xs, double level) {
  IntervalSummary s;
  double acc = 0.0;
  for (double x : xs) acc += x;
  s.mean = acc / static_cast<double>(xs.size());
  const double tail = (1.0 - level) / 2.0;
  std::sort(xs.begin(), xs.end());
  auto q = [&](double p) {
    const double h = (static_cast<double>(xs.size()) - 1.0) * p;
    const auto i = static_cast<std::size_t>(std::floor(h));
    if (i + 1 >= xs.size()) return xs.back();
    return xs[i] + (h - static_cast<double>(i)) * (xs[i + 1] - xs[i]);
  };
  s.lower = q(tail);
  s.upper = q(1.0 - tail);
  return s;
}

template <class PerDraw>
std::vector<double> across_draws(const PosteriorDraws& draws, PerDraw&& f) {
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(draws.total_draws()));
  for (const auto& chain : draws.chains) {
    for (Eigen::Index s = 0; s < chain.draws.rows(); ++s) {
      out.push_back(f(chain.draws.row(s)));
    }
  }
  return out;
}

}  // namespace detail

/// Pointwise posterior mean and equal-tailed credible band of f(z) on a
/// uniform grid of the basis domain.
inline RafEstimate raf_curve(const PosteriorDraws& draws, const ParamLayout& layout,
                             const KnotVector& kv, double grid_step = 0.1,
                             double level = 0.95) {
  if (draws.total_draws() == 0) throw config_error("raf_curve: no posterior draws");
  if (!(grid_step > 0.0)) throw config_error("raf_curve: grid_step must be positive");
  if (!(level > 0.0 && level < 1.0)) throw config_error("raf_curve: level must be in (0,1)");

  const auto n_points =
      static_cast<int>(std::lround((kv.domain_hi - kv.domain_lo) / grid_step)) + 1;
  RafEstimate est;
  est.level = level;
  est.grid.resize(n_points);
  est.mean.resize(n_points);
  est.lower.resize(n_points);
  est.upper.resize(n_points);

  std::vector<double> fz(static_cast<std::size_t>(draws.total_draws()));
  for (int g = 0; g < n_points; ++g) {
    const double z =
        kv.domain_lo + (kv.domain_hi - kv.domain_lo) * g / (n_points - 1.0);
    est.grid[g] = z;
    const LocalBasis lb = eval_basis_local(kv, z);
    std::size_t s = 0;
    for (const auto& chain : draws.chains) {
      for (Eigen::Index r = 0; r < chain.draws.rows(); ++r) {
        double v = 0.0;
        for (int m = 0; m <= kSplineDegree; ++m) {
          v += chain.draws(r, layout.gamma_index(lb.first + m)) * lb.values[m];
        }
        fz[s++] = v;
      }
    }
    const auto sum = detail::summarize(fz, level);
    est.mean[g] = sum.mean;
    est.lower[g] = sum.lower;
    est.upper[g] = sum.upper;
  }
  return est;
}

namespace detail {

/// Linear predictor of a scenario for one stored draw row.
inline double scenario_eta(const Eigen::RowVectorXd& row, const ParamLayout& layout,
                           const KnotVector& kv, const Scenario& sc) {
  double eta = 0.0;
  for (int j = 0; j < layout.p; ++j) {
    eta += sc.covariate_profile[j] * row[layout.beta_index(j)];
  }
  for (double z : sc.episode_durations) {
    const LocalBasis lb = eval_basis_local(kv, z);
    for (int m = 0; m <= kSplineDegree; ++m) {
      eta += row[layout.gamma_index(lb.first + m)] * lb.values[m];
    }
  }
  return eta;
}

inline void check_scenario(const Scenario& sc, const ParamLayout& layout,
                           const KnotVector& kv) {
  if (sc.covariate_profile.size() != layout.p) {
    throw config_error("scenario '" + sc.label + "': covariate profile has dimension " +
                       std::to_string(sc.covariate_profile.size()) + ", model expects " +
                       std::to_string(layout.p));
  }
  for (double z : sc.episode_durations) {
    if (!(z >= kv.domain_lo && z <= kv.domain_hi)) {
      throw extrapolation_error("scenario '" + sc.label + "': duration " +
                                std::to_string(z) + " outside the basis domain");
    }
  }
}

}  // namespace detail

/// Posterior of expit(x' beta + sum_j f(z_j)) under a scenario.
inline ScenarioSummary scenario_probability(const PosteriorDraws& draws,
                                            const ParamLayout& layout,
                                            const KnotVector& kv, const Scenario& sc,
                                            double level = 0.95) {
  if (draws.total_draws() == 0) throw config_error("scenario_probability: no draws");
  detail::check_scenario(sc, layout, kv);
  auto probs = detail::across_draws(draws, [&](const Eigen::RowVectorXd& row) {
    return expit(detail::scenario_eta(row, layout, kv, sc));
  });
  return ScenarioSummary{sc.label, detail::summarize(std::move(probs), level)};
}

/// Posterior of the probability difference p(b) - p(a), evaluated draw by draw.
inline ContrastResult scenario_contrast(const PosteriorDraws& draws,
                                        const ParamLayout& layout, const KnotVector& kv,
                                        const Scenario& a, const Scenario& b,
                                        double level = 0.95) {
  if (draws.total_draws() == 0) throw config_error("scenario_contrast: no draws");
  detail::check_scenario(a, layout, kv);
  detail::check_scenario(b, layout, kv);
  std::vector<double> pa, pb, diff;
  pa.reserve(static_cast<std::size_t>(draws.total_draws()));
  pb.reserve(pa.capacity());
  diff.reserve(pa.capacity());
  for (const auto& chain : draws.chains) {
    for (Eigen::Index s = 0; s < chain.draws.rows(); ++s) {
      const auto row = chain.draws.row(s);
      const double va = expit(detail::scenario_eta(row, layout, kv, a));
      const double vb = expit(detail::scenario_eta(row, layout, kv, b));
      pa.push_back(va);
      pb.push_back(vb);
      diff.push_back(vb - va);
    }
  }
  ContrastResult res;
  res.a = ScenarioSummary{a.label, detail::summarize(std::move(pa), level)};
  res.b = ScenarioSummary{b.label, detail::summarize(std::move(pb), level)};
  res.difference = detail::summarize(std::move(diff), level);
  return res;
}

struct ElpdResult {
  double elpd = 0.0;
  double se = 0.0;
  std::vector<double> pointwise;
};

/// Leave-one-out expected log predictive density by truncated importance
/// sampling: raw weights 1/p(y_i | theta_s), capped at mean * sqrt(S).
inline ElpdResult loo_elpd(const PosteriorDraws& draws, const ParamLayout& layout,
                           const AggregatedDesign& agg) {
  const long S = draws.total_draws();
  if (S < 100) {
    throw config_error("loo_elpd: need at least 100 draws, got " + std::to_string(S) +
                       " (importance weights would be too noisy)");
  }
  const int I = agg.n_subjects();
  ElpdResult res;
  res.pointwise.resize(I);

  // draw x subject pointwise log likelihoods
  Mat loglik(S, I);
  long s = 0;
  for (const auto& chain : draws.chains) {
    for (Eigen::Index r = 0; r < chain.draws.rows(); ++r, ++s) {
      const auto row = chain.draws.row(r);
      const Vec beta = row.segment(0, layout.p).transpose();
      const Vec gamma = row.segment(layout.p, layout.K).transpose();
      const Vec eta = agg.X * beta + agg.B * gamma;
      for (int i = 0; i < I; ++i) {
        loglik(s, i) = agg.y[i] * eta[i] - softplus(eta[i]);
      }
    }
  }

  const double half_log_s = 0.5 * std::log(static_cast<double>(S));
  double total = 0.0;
  for (int i = 0; i < I; ++i) {
    // log raw weights are -loglik; cap at log-mean weight + log sqrt(S)
    double lw_max = -std::numeric_limits<double>::infinity();
    for (long k = 0; k < S; ++k) lw_max = std::max(lw_max, -loglik(k, i));
    double sum_exp = 0.0;
    for (long k = 0; k < S; ++k) sum_exp += std::exp(-loglik(k, i) - lw_max);
    const double log_mean_w = lw_max + std::log(sum_exp / static_cast<double>(S));
    const double cap = log_mean_w + half_log_s;

    double num = -std::numeric_limits<double>::infinity();
    double den = -std::numeric_limits<double>::infinity();
    for (long k = 0; k < S; ++k) {
      const double lw = std::min(-loglik(k, i), cap);
      num = log_add_exp(num, lw + loglik(k, i));
      den = log_add_exp(den, lw);
    }
    res.pointwise[i] = num - den;
    total += res.pointwise[i];
  }
  res.elpd = total;
  const double mean = total / I;
  double var = 0.0;
  for (double v : res.pointwise) var += (v - mean) * (v - mean);
  var /= (I - 1.0);
  res.se = std::sqrt(static_cast<double>(I) * var);
  return res;
}

}  // namespace flame
