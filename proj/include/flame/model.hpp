#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flame/common.hpp"
#include "flame/data.hpp"
#include "flame/splines.hpp"

namespace flame {

/// Priors and basis configuration; together with a Dataset this fully
/// determines the log posterior.
struct ModelSpec {
  int K = 30;
  double domain_lo = 0.0;
  double domain_hi = 30.0;
  double beta_prior_sd = 10.0;
  double gamma1_prior_sd = 1e-3;  // soft f(0) ~ 0 anchor
  double gamma2_prior_sd = 1.0;
  double tau_cauchy_scale = 1.0;
  bool anchor_nonnegative = true;

  void validate() const {
    if (K < kMinBasisSize) {
      throw config_error("model: basis size K must be at least " +
                         std::to_string(kMinBasisSize) + ", got " +
                         std::to_string(K));
    }
    if (!(domain_hi > domain_lo) || domain_lo < 0.0) {
      throw config_error("model: need domain_hi > domain_lo >= 0");
    }
    if (!(beta_prior_sd > 0.0) || !(gamma1_prior_sd > 0.0) ||
        !(gamma2_prior_sd > 0.0) || !(tau_cauchy_scale > 0.0)) {
      throw config_error("model: all prior scales must be positive");
    }
  }
};

/// Constrained model parameters.
struct ParameterVector {
  Vec beta;       // p fixed effects
  Vec gamma;      // K spline coefficients
  double tau = 1.0;  // random-walk smoothing scale, > 0
};

/// Covariate matrix and episode-aggregated basis matrix: B(i,k) is the sum of
/// b_k over subject i's episode durations, so the linear predictor is
/// X beta + B gamma.
struct AggregatedDesign {
  Mat X;  // I x p
  Mat B;  // I x K
  Eigen::VectorXi y;
  Vec total_durations;  // T_i, for the GLM special case and oracles

  int n_subjects() const { return static_cast<int>(X.rows()); }
};

inline AggregatedDesign aggregate_design(const Dataset& ds, const KnotVector& kv) {
  const int I = ds.size();
  const int p = ds.covariate_dim();
  AggregatedDesign agg;
  agg.X.resize(I, p);
  agg.B = Mat::Zero(I, kv.size());
  agg.y.resize(I);
  agg.total_durations.resize(I);
  for (int i = 0; i < I; ++i) {
    const auto& s = ds.subjects[i];
    for (int j = 0; j < p; ++j) agg.X(i, j) = s.x[j];
    agg.y[i] = s.y;
    agg.total_durations[i] = total_duration(s);
    for (std::size_t j = 0; j < s.episodes.size(); ++j) {
      LocalBasis lb;
      try {
        lb = eval_basis_local(kv, s.episodes[j].duration);
      } catch (const extrapolation_error& e) {
        throw extrapolation_error("aggregate_design: subject '" + s.id +
                                  "' episode " + std::to_string(j + 1) + ": " +
                                  e.what());
      }
      for (int m = 0; m <= kSplineDegree; ++m) {
        agg.B(i, lb.first + m) += lb.values[m];
      }
    }
  }
  return agg;
}

/// Bernoulli-logit log likelihood sum_i [ y_i eta_i - softplus(eta_i) ].
inline double log_likelihood(const ParameterVector& params,
                             const AggregatedDesign& agg) {
  if (params.beta.size() != agg.X.cols() || params.gamma.size() != agg.B.cols()) {
    throw config_error("log_likelihood: parameter/design dimension mismatch");
  }
  const Vec eta = agg.X * params.beta + agg.B * params.gamma;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    ll += agg.y[i] * eta[i] - softplus(eta[i]);
  }
  return ll;
}

namespace detail {

inline double log_normal_pdf(double x, double sd) {
  return -0.5 * std::log(2.0 * M_PI) - std::log(sd) - x * x / (2.0 * sd * sd);
}

inline double log_half_normal_pdf(double x, double sd) {
  return std::log(2.0) + log_normal_pdf(x, sd);  // support [0, inf)
}

inline double log_half_cauchy_pdf(double x, double scale) {
  return std::log(2.0) - std::log(M_PI) - std::log(scale) -
         std::log1p((x / scale) * (x / scale));
}

}  // namespace detail

/// Log prior with all normalizing constants: RW2 walk terms through the
/// difference operator, the two gamma anchors, the half-Cauchy smoothing
/// scale, and independent normals on beta.
inline double log_prior(const ParameterVector& params, const ModelSpec& spec,
                        const PenaltyOperator& D) {
  if (!(params.tau > 0.0)) throw config_error("log_prior: tau must be positive");
  if (spec.anchor_nonnegative &&
      (params.gamma[0] < 0.0 || params.gamma[1] < 0.0)) {
    throw config_error("log_prior: anchored gamma_1, gamma_2 must be nonnegative");
  }
  double lp = 0.0;
  const Vec d = D.apply(params.gamma);
  for (Eigen::Index k = 0; k < d.size(); ++k) {
    lp += detail::log_normal_pdf(d[k], params.tau);
  }
  if (spec.anchor_nonnegative) {
    lp += detail::log_half_normal_pdf(params.gamma[0], spec.gamma1_prior_sd);
    lp += detail::log_half_normal_pdf(params.gamma[1], spec.gamma2_prior_sd);
  } else {
    lp += detail::log_normal_pdf(params.gamma[0], spec.gamma1_prior_sd);
    lp += detail::log_normal_pdf(params.gamma[1], spec.gamma2_prior_sd);
  }
  lp += detail::log_half_cauchy_pdf(params.tau, spec.tau_cauchy_scale);
  for (Eigen::Index j = 0; j < params.beta.size(); ++j) {
    lp += detail::log_normal_pdf(params.beta[j], spec.beta_prior_sd);
  }
  return lp;
}

/// Layout of the unconstrained parameter vector u:
///   u[0..p)       beta (identity)
///   u[p..p+K)     gamma; when anchored the first two map through
///                 gamma_j = prior_sd_j * exp(u_j) with Jacobian correction
///   u[p+K]        tau = tau_cauchy_scale * exp(u)
/// Scaling by the prior sd keeps a unit-scale initialization (u in [-2,2])
/// inside the prior's bulk even for the 1e-3 anchor.
class ParameterMap {
 public:
  ParameterMap(int p, const ModelSpec& spec) : p_(p), spec_(spec) {}

  int dim() const { return p_ + spec_.K + 1; }
  int p() const { return p_; }
  int K() const { return spec_.K; }
  bool anchored() const { return spec_.anchor_nonnegative; }

  ParameterVector constrain(const Vec& u) const {
    check_dim(u);
    ParameterVector pv;
    pv.beta = u.head(p_);
    pv.gamma = u.segment(p_, spec_.K);
    if (anchored()) {
      pv.gamma[0] = spec_.gamma1_prior_sd * std::exp(u[p_]);
      pv.gamma[1] = spec_.gamma2_prior_sd * std::exp(u[p_ + 1]);
    }
    pv.tau = spec_.tau_cauchy_scale * std::exp(u[p_ + spec_.K]);
    return pv;
  }

  Vec unconstrain(const ParameterVector& pv) const {
    Vec u(dim());
    u.head(p_) = pv.beta;
    u.segment(p_, spec_.K) = pv.gamma;
    if (anchored()) {
      u[p_] = std::log(pv.gamma[0] / spec_.gamma1_prior_sd);
      u[p_ + 1] = std::log(pv.gamma[1] / spec_.gamma2_prior_sd);
    }
    u[p_ + spec_.K] = std::log(pv.tau / spec_.tau_cauchy_scale);
    return u;
  }

  /// log |d(constrained)/du|, a sum over the exp-transformed coordinates.
  double log_jacobian(const Vec& u) const {
    double lj = std::log(spec_.tau_cauchy_scale) + u[p_ + spec_.K];
    if (anchored()) {
      lj += std::log(spec_.gamma1_prior_sd) + u[p_];
      lj += std::log(spec_.gamma2_prior_sd) + u[p_ + 1];
    }
    return lj;
  }

 private:
  void check_dim(const Vec& u) const {
    if (u.size() != dim()) {
      throw config_error("parameter map: expected dimension " +
                         std::to_string(dim()) + ", got " +
                         std::to_string(u.size()));
    }
  }

  int p_;
  ModelSpec spec_;
};

/// The differentiable unconstrained target: log posterior (likelihood + prior
/// + transform Jacobian) and its exact analytic gradient.
class LogPosterior {
 public:
  LogPosterior(const AggregatedDesign& agg, const ModelSpec& spec)
      : agg_(agg),
        spec_(spec),
        map_(static_cast<int>(agg.X.cols()), spec),
        D_(difference_penalty(spec.K)) {
    spec.validate();
  }

  const ParameterMap& map() const { return map_; }
  int dim() const { return map_.dim(); }

  double value(const Vec& u) const {
    check_input(u);
    const ParameterVector pv = map_.constrain(u);
    const double v = log_likelihood(pv, agg_) + log_prior(pv, spec_, D_) +
                     map_.log_jacobian(u);
    if (std::isnan(v)) {
      throw numeric_error("log posterior is NaN near parameter index " +
                          std::to_string(first_extreme_index(u)));
    }
    return v;
  }

  /// Returns the log posterior and fills grad with its analytic gradient.
  double value_and_gradient(const Vec& u, Vec& grad) const {
    check_input(u);
    const int p = map_.p();
    const int K = map_.K();
    const ParameterVector pv = map_.constrain(u);
    const double tau = pv.tau;

    const Vec eta = agg_.X * pv.beta + agg_.B * pv.gamma;
    double ll = 0.0;
    Vec resid(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      ll += agg_.y[i] * eta[i] - softplus(eta[i]);
      resid[i] = agg_.y[i] - expit(eta[i]);
    }

    const Vec d = D_.apply(pv.gamma);
    double lp = 0.0;
    for (Eigen::Index k = 0; k < d.size(); ++k) {
      lp += detail::log_normal_pdf(d[k], tau);
    }
    const double s1 = spec_.gamma1_prior_sd, s2 = spec_.gamma2_prior_sd;
    if (spec_.anchor_nonnegative) {
      lp += detail::log_half_normal_pdf(pv.gamma[0], s1);
      lp += detail::log_half_normal_pdf(pv.gamma[1], s2);
    } else {
      lp += detail::log_normal_pdf(pv.gamma[0], s1);
      lp += detail::log_normal_pdf(pv.gamma[1], s2);
    }
    lp += detail::log_half_cauchy_pdf(tau, spec_.tau_cauchy_scale);
    for (Eigen::Index j = 0; j < p; ++j) {
      lp += detail::log_normal_pdf(pv.beta[j], spec_.beta_prior_sd);
    }

    grad.resize(map_.dim());
    grad.head(p) = agg_.X.transpose() * resid -
                   pv.beta / (spec_.beta_prior_sd * spec_.beta_prior_sd);
    Vec ggrad = agg_.B.transpose() * resid;
    // RW2 term: -D^T (D gamma) / tau^2, applied with the stencil directly.
    const double inv_t2 = 1.0 / (tau * tau);
    for (Eigen::Index k = 0; k < d.size(); ++k) {
      const double w = d[k] * inv_t2;
      ggrad[k] -= w;
      ggrad[k + 1] += 2.0 * w;
      ggrad[k + 2] -= w;
    }
    ggrad[0] -= pv.gamma[0] / (s1 * s1);
    ggrad[1] -= pv.gamma[1] / (s2 * s2);
    if (map_.anchored()) {
      ggrad[0] = ggrad[0] * pv.gamma[0] + 1.0;  // d gamma / du = gamma, + Jacobian
      ggrad[1] = ggrad[1] * pv.gamma[1] + 1.0;
    }
    grad.segment(p, K) = ggrad;

    const double sc = spec_.tau_cauchy_scale;
    const double dtau = -static_cast<double>(K - 2) / tau +
                        d.squaredNorm() / (tau * tau * tau) -
                        2.0 * tau / (sc * sc + tau * tau);
    grad[p + K] = dtau * tau + 1.0;

    const double v = ll + lp + map_.log_jacobian(u);
    if (std::isnan(v) || !grad.allFinite()) {
      throw numeric_error("log posterior gradient is non-finite near parameter index " +
                          std::to_string(first_extreme_index(u)));
    }
    return v;
  }

 private:
  void check_input(const Vec& u) const {
    if (u.size() != map_.dim()) {
      throw config_error("log posterior: dimension mismatch");
    }
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      if (!std::isfinite(u[i])) {
        throw numeric_error("log posterior: non-finite input at parameter index " +
                            std::to_string(i));
      }
    }
  }

  int first_extreme_index(const Vec& u) const {
    Eigen::Index worst = 0;
    u.cwiseAbs().maxCoeff(&worst);
    return static_cast<int>(worst);
  }

  const AggregatedDesign& agg_;
  ModelSpec spec_;
  ParameterMap map_;
  PenaltyOperator D_;
};

}  // namespace flame
