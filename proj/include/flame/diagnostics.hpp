#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "flame/common.hpp"
#include "flame/sampler.hpp"

namespace flame {

struct ParamDiagnostic {
  double rhat = 1.0;
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
  bool degenerate = false;        // zero within-chain variance
  bool ess_above_total = false;   // estimator exceeded 1.1 * total draws
};

struct Diagnostics {
  std::vector<ParamDiagnostic> params;
  long divergence_count = 0;
  double divergent_fraction = 0.0;

  double max_rhat() const {
    double m = 0.0;
    for (const auto& p : params) {
      if (!p.degenerate) m = std::max(m, p.rhat);
    }
    return m;
  }
  double min_ess_bulk() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& p : params) {
      if (!p.degenerate) m = std::min(m, p.ess_bulk);
    }
    return std::isfinite(m) ? m : 0.0;
  }
  bool healthy(double rhat_threshold = 1.01) const {
    if (divergent_fraction > 0.25) return false;
    for (const auto& p : params) {
      if (!p.degenerate && p.rhat > rhat_threshold) return false;
    }
    return true;
  }
};

namespace detail {

/// Splits each chain's column in half, dropping the middle draw when odd.
inline std::vector<Vec> split_halves(const PosteriorDraws& draws, int j) {
  const int n = draws.samples_per_chain() / 2;
  std::vector<Vec> seqs;
  seqs.reserve(2 * static_cast<std::size_t>(draws.n_chains()));
  for (int c = 0; c < draws.n_chains(); ++c) {
    const Vec col = draws.parameter(c, j);
    seqs.push_back(col.head(n));
    seqs.push_back(col.tail(n));
  }
  return seqs;
}

struct VarDecomp {
  double within = 0.0;    // W
  double var_plus = 0.0;  // (n-1)/n W + B/n
  bool degenerate = false;
  bool split = false;     // chains ended in disjoint regions (W = 0, B > 0)
};

inline VarDecomp variance_decomposition(const std::vector<Vec>& seqs) {
  const auto m = static_cast<double>(seqs.size());
  const auto n = static_cast<double>(seqs.front().size());
  VarDecomp vd;
  std::vector<double> means(seqs.size());
  double w = 0.0;
  for (std::size_t c = 0; c < seqs.size(); ++c) {
    means[c] = seqs[c].mean();
    w += (seqs[c].array() - means[c]).square().sum() / (n - 1.0);
  }
  w /= m;
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / m;
  double b_over_n = 0.0;
  for (double mu : means) b_over_n += (mu - grand) * (mu - grand);
  b_over_n /= (m - 1.0);
  vd.within = w;
  vd.var_plus = (n - 1.0) / n * w + b_over_n;
  if (w <= 0.0 || vd.var_plus <= 0.0) {
    vd.degenerate = true;
    vd.split = b_over_n > 0.0;
  }
  return vd;
}

/// Effective sample size of the mean through Geyer's initial positive
/// monotone sequence on paired autocorrelation sums.
inline double ess_mean(const std::vector<Vec>& seqs) {
  const auto vd = variance_decomposition(seqs);
  if (vd.degenerate) return 0.0;
  const auto m = static_cast<double>(seqs.size());
  const auto n = static_cast<Eigen::Index>(seqs.front().size());

  std::vector<Vec> centered(seqs.size());
  for (std::size_t c = 0; c < seqs.size(); ++c) {
    centered[c] = seqs[c].array() - seqs[c].mean();
  }
  auto mean_autocov = [&](Eigen::Index t) {
    double acc = 0.0;
    for (const auto& x : centered) {
      acc += x.head(n - t).dot(x.tail(n - t)) / static_cast<double>(n);
    }
    return acc / m;
  };

  // rho_0 + rho_1, rho_2 + rho_3, ... while positive, forced non-increasing
  double tau = 0.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (Eigen::Index t = 0; t + 1 < n; t += 2) {
    const double rho_even = 1.0 - (vd.within - mean_autocov(t)) / vd.var_plus;
    const double rho_odd = 1.0 - (vd.within - mean_autocov(t + 1)) / vd.var_plus;
    double pair = rho_even + rho_odd;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau - 1.0, 1.0 / std::log10(m * static_cast<double>(n) + 10.0));
  return m * static_cast<double>(n) / tau;
}

/// Rank-normalizes pooled draws (average ranks for ties, offset 3/8) and
/// reassembles sequences of the original shape.
inline std::vector<Vec> rank_normalize(const std::vector<Vec>& seqs) {
  const auto n = seqs.front().size();
  const std::size_t total = seqs.size() * static_cast<std::size_t>(n);
  std::vector<std::pair<double, std::size_t>> pool;
  pool.reserve(total);
  for (std::size_t c = 0; c < seqs.size(); ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      pool.emplace_back(seqs[c][i], c * static_cast<std::size_t>(n) + i);
    }
  }
  std::sort(pool.begin(), pool.end());
  std::vector<double> rank(total);
  std::size_t i = 0;
  while (i < total) {
    std::size_t j = i;
    while (j + 1 < total && pool[j + 1].first == pool[i].first) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[pool[k].second] = avg;
    i = j + 1;
  }
  std::vector<Vec> out(seqs.size(), Vec(n));
  const double denom = static_cast<double>(total) + 0.25;
  for (std::size_t c = 0; c < seqs.size(); ++c) {
    for (Eigen::Index k = 0; k < n; ++k) {
      const double r = rank[c * static_cast<std::size_t>(n) + k];
      out[c][k] = inv_normal_cdf((r - 0.375) / denom);
    }
  }
  return out;
}

inline double pooled_quantile(const std::vector<Vec>& seqs, double p) {
  std::vector<double> all;
  all.reserve(seqs.size() * static_cast<std::size_t>(seqs.front().size()));
  for (const auto& s : seqs) {
    all.insert(all.end(), s.data(), s.data() + s.size());
  }
  return quantile(std::move(all), p);
}

}  // namespace detail

/// Split-R-hat, rank-normalized bulk ESS, and tail ESS for every parameter.
inline Diagnostics diagnose(const PosteriorDraws& draws) {
  if (draws.n_chains() < 2) {
    throw config_error("diagnose: need at least 2 chains; run the sampler with chains >= 2");
  }
  if (draws.samples_per_chain() < 4) {
    throw config_error("diagnose: need at least 4 draws per chain");
  }
  Diagnostics diag;
  diag.divergence_count = draws.divergence_count();
  diag.divergent_fraction = draws.divergent_fraction();
  const int dim = draws.param_dim();
  const double total = static_cast<double>(draws.total_draws());
  diag.params.resize(dim);
  for (int j = 0; j < dim; ++j) {
    auto& pd = diag.params[j];
    const auto seqs = detail::split_halves(draws, j);
    const auto vd = detail::variance_decomposition(seqs);
    if (vd.degenerate) {
      pd.degenerate = true;
      pd.rhat = vd.split ? std::numeric_limits<double>::infinity() : 1.0;
      pd.ess_bulk = 0.0;
      pd.ess_tail = 0.0;
      continue;
    }
    pd.rhat = std::sqrt(vd.var_plus / vd.within);
    pd.ess_bulk = detail::ess_mean(detail::rank_normalize(seqs));

    const double q05 = detail::pooled_quantile(seqs, 0.05);
    const double q95 = detail::pooled_quantile(seqs, 0.95);
    auto indicator_ess = [&](double q) {
      std::vector<Vec> ind(seqs.size());
      for (std::size_t c = 0; c < seqs.size(); ++c) {
        ind[c] = (seqs[c].array() <= q).cast<double>();
      }
      return detail::ess_mean(ind);
    };
    pd.ess_tail = std::min(indicator_ess(q05), indicator_ess(q95));
    pd.ess_above_total = pd.ess_bulk > 1.1 * total || pd.ess_tail > 1.1 * total;
  }
  return diag;
}

}  // namespace flame
