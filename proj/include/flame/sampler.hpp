#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "flame/common.hpp"
#include "flame/rng.hpp"

namespace flame {

struct SamplerConfig {
  int chains = 4;
  int warmup = 1000;
  int samples = 2000;
  double target_accept = 0.8;
  int max_tree_depth = 10;
  std::uint64_t seed = 0;
  bool adapt_step_size = true;
  bool adapt_mass_matrix = true;
  double init_step_size = 1.0;
  double max_energy_error = 1000.0;  // divergence threshold
  double init_jitter = 2.0;          // chains start uniform in [-jitter, jitter]
  double rhat_threshold = 1.01;      // health criterion applied downstream
  int threads = 0;                   // 0 = hardware concurrency

  void validate() const {
    if (chains < 1) throw config_error("sampler: chains must be >= 1");
    if (samples < 1) throw config_error("sampler: samples must be >= 1");
    if ((adapt_step_size || adapt_mass_matrix) && warmup < 100) {
      throw config_error("sampler: warmup must be >= 100 when adaptation is enabled");
    }
    if (warmup < 0) throw config_error("sampler: warmup must be nonnegative");
    if (!(target_accept > 0.0 && target_accept < 1.0)) {
      throw config_error("sampler: target_accept must lie in (0,1)");
    }
    if (max_tree_depth < 1 || max_tree_depth > 14) {
      throw config_error("sampler: max_tree_depth must lie in [1,14]");
    }
    if (!(init_step_size > 0.0)) throw config_error("sampler: init_step_size must be > 0");
  }
};

/// One chain's post-warmup output: constrained draws (row per draw) plus
/// per-draw sampler statistics and the frozen adaptation state.
struct ChainDraws {
  Mat draws;
  std::vector<std::uint8_t> divergent;
  std::vector<int> tree_depth;
  std::vector<double> step_size;
  double final_step_size = 0.0;
  Vec inv_mass_diag;
};

struct PosteriorDraws {
  std::vector<ChainDraws> chains;
  bool unhealthy_divergences = false;  // > 25% divergent transitions post-warmup

  int n_chains() const { return static_cast<int>(chains.size()); }
  int samples_per_chain() const {
    return chains.empty() ? 0 : static_cast<int>(chains.front().draws.rows());
  }
  int param_dim() const {
    return chains.empty() ? 0 : static_cast<int>(chains.front().draws.cols());
  }
  long total_draws() const {
    return static_cast<long>(n_chains()) * samples_per_chain();
  }
  long divergence_count() const {
    long n = 0;
    for (const auto& c : chains) {
      for (auto d : c.divergent) n += d;
    }
    return n;
  }
  double divergent_fraction() const {
    const long t = total_draws();
    return t == 0 ? 0.0 : static_cast<double>(divergence_count()) / static_cast<double>(t);
  }
  /// Column of parameter j from chain c.
  Vec parameter(int chain, int j) const { return chains[chain].draws.col(j); }
};

namespace detail {

/// Hoffman & Gelman dual averaging of log step size.
class DualAveraging {
 public:
  DualAveraging(double eps0, double target)
      : mu_(std::log(10.0 * eps0)),
        log_eps_(std::log(eps0)),
        log_eps_bar_(0.0),
        h_bar_(0.0),
        target_(target) {}

  void update(double accept_stat) {
    ++m_;
    const double w = 1.0 / (m_ + t0_);
    h_bar_ = (1.0 - w) * h_bar_ + w * (target_ - accept_stat);
    log_eps_ = mu_ - std::sqrt(m_) / gamma_ * h_bar_;
    const double x = std::pow(m_, -kappa_);
    log_eps_bar_ = x * log_eps_ + (1.0 - x) * log_eps_bar_;
  }

  double current() const { return std::exp(log_eps_); }
  double averaged() const { return m_ == 0 ? std::exp(log_eps_) : std::exp(log_eps_bar_); }

  void restart(double eps0) {
    mu_ = std::log(10.0 * eps0);
    log_eps_ = std::log(eps0);
    log_eps_bar_ = 0.0;
    h_bar_ = 0.0;
    m_ = 0;
  }

 private:
  double mu_;
  double log_eps_;
  double log_eps_bar_;
  double h_bar_;
  double target_;
  double m_ = 0.0;
  static constexpr double t0_ = 10.0;
  static constexpr double gamma_ = 0.05;
  static constexpr double kappa_ = 0.75;
};

class Welford {
 public:
  explicit Welford(int dim) : mean_(Vec::Zero(dim)), m2_(Vec::Zero(dim)) {}

  void add(const Vec& x) {
    ++n_;
    const Vec delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta.cwiseProduct(x - mean_);
  }

  long count() const { return n_; }

  Vec variance() const {
    if (n_ < 2) return Vec::Ones(mean_.size());
    return m2_ / static_cast<double>(n_ - 1);
  }

  void reset() {
    n_ = 0;
    mean_.setZero();
    m2_.setZero();
  }

 private:
  long n_ = 0;
  Vec mean_;
  Vec m2_;
};

/// Stan-style warmup phases: a fast initial buffer (step size only), doubling
/// slow windows that feed the mass matrix, and a fast terminal buffer.
struct WarmupSchedule {
  int init_buffer = 0;
  int term_buffer = 0;
  std::vector<int> window_ends;  // iteration indices where a slow window closes

  static WarmupSchedule build(int warmup, bool adapt_mass) {
    WarmupSchedule ws;
    if (!adapt_mass || warmup <= 0) return ws;
    int init = 75, term = 50, base = 25;
    if (warmup < init + base + term) {
      init = static_cast<int>(0.15 * warmup);
      term = static_cast<int>(0.10 * warmup);
      base = warmup - init - term;
    }
    ws.init_buffer = init;
    ws.term_buffer = term;
    int start = init;
    int width = base;
    while (true) {
      int end = start + width;
      // absorb a final stub window that could not double again
      if (end + 2 * width > warmup - term) end = warmup - term;
      ws.window_ends.push_back(end);
      if (end >= warmup - term) break;
      start = end;
      width *= 2;
    }
    return ws;
  }
};

}  // namespace detail

/// Dynamic multinomial no-U-turn sampler over a differentiable log density.
///
/// TargetF must provide: int dim() and
/// double value_and_gradient(const Vec&, Vec&) (may throw; a throwing or
/// non-finite evaluation rejects the trajectory as divergent).
template <class TargetF>
class NutsSampler {
 public:
  NutsSampler(const TargetF& target, const SamplerConfig& cfg)
      : target_(target), cfg_(cfg) {}

  /// Runs one chain to completion; deterministic given (cfg.seed, chain_index).
  ChainDraws run_chain(int chain_index, const std::optional<Vec>& init) const {
    const int dim = target_.dim();
    Rng rng(cfg_.seed, static_cast<std::uint64_t>(chain_index), 0x6E75747355ULL);

    Vec q(dim), grad(dim);
    double logp = -std::numeric_limits<double>::infinity();
    if (init) {
      if (init->size() != dim) throw config_error("sampler: init dimension mismatch");
      q = *init;
      logp = eval(q, grad);
      if (!std::isfinite(logp)) {
        throw config_error("sampler: log density is not finite at the supplied init");
      }
    } else {
      bool found = false;
      for (int attempt = 0; attempt < 100 && !found; ++attempt) {
        for (int i = 0; i < dim; ++i) q[i] = rng.uniform(-cfg_.init_jitter, cfg_.init_jitter);
        logp = eval(q, grad);
        found = std::isfinite(logp);
      }
      if (!found) {
        throw config_error("sampler: failed to find a finite-density init in 100 draws");
      }
    }

    Vec inv_mass = Vec::Ones(dim);
    double eps = cfg_.init_step_size;
    if (cfg_.adapt_step_size) eps = find_initial_step(q, logp, grad, inv_mass, rng);
    detail::DualAveraging da(eps, cfg_.target_accept);
    detail::Welford welford(dim);
    const auto schedule = detail::WarmupSchedule::build(cfg_.warmup, cfg_.adapt_mass_matrix);
    std::size_t next_window = 0;

    for (int it = 0; it < cfg_.warmup; ++it) {
      const auto res = transition(q, logp, grad, eps, inv_mass, rng);
      if (cfg_.adapt_step_size) {
        da.update(res.accept_stat);
        eps = da.current();
      }
      const int done = it + 1;
      if (next_window < schedule.window_ends.size() && done > schedule.init_buffer &&
          done <= schedule.window_ends[next_window]) {
        welford.add(q);
        if (done == schedule.window_ends[next_window]) {
          const double n = static_cast<double>(welford.count());
          inv_mass = (n / (n + 5.0)) * welford.variance().array() + 1e-3 * (5.0 / (n + 5.0));
          welford.reset();
          ++next_window;
          if (cfg_.adapt_step_size) {
            eps = find_initial_step(q, logp, grad, inv_mass, rng);
            da.restart(eps);
          }
        }
      }
    }
    if (cfg_.adapt_step_size && cfg_.warmup > 0) eps = da.averaged();

    ChainDraws out;
    out.draws.resize(cfg_.samples, dim);
    out.divergent.resize(cfg_.samples);
    out.tree_depth.resize(cfg_.samples);
    out.step_size.resize(cfg_.samples);
    out.inv_mass_diag = inv_mass;
    out.final_step_size = eps;
    for (int s = 0; s < cfg_.samples; ++s) {
      const auto res = transition(q, logp, grad, eps, inv_mass, rng);
      out.draws.row(s) = q.transpose();
      out.divergent[s] = res.divergent ? 1 : 0;
      out.tree_depth[s] = res.depth;
      out.step_size[s] = eps;
    }
    return out;
  }

 private:
  struct PhasePoint {
    Vec q;
    Vec p;
    Vec grad;
    double logp = 0.0;
  };

  struct TransitionResult {
    double accept_stat = 0.0;
    int depth = 0;
    bool divergent = false;
  };

  double eval(const Vec& q, Vec& grad) const {
    try {
      const double v = target_.value_and_gradient(q, grad);
      if (std::isnan(v)) return -std::numeric_limits<double>::infinity();
      return v;
    } catch (const std::exception&) {
      grad.setZero();
      return -std::numeric_limits<double>::infinity();
    }
  }

  double hamiltonian(const PhasePoint& z, const Vec& inv_mass) const {
    return -z.logp + 0.5 * z.p.dot(inv_mass.cwiseProduct(z.p));
  }

  /// One leapfrog step of length eps (signed). Returns false if the density
  /// became non-finite.
  bool leapfrog(PhasePoint& z, double eps, const Vec& inv_mass) const {
    z.p += 0.5 * eps * z.grad;
    z.q += eps * inv_mass.cwiseProduct(z.p);
    z.logp = eval(z.q, z.grad);
    z.p += 0.5 * eps * z.grad;
    return std::isfinite(z.logp);
  }

  /// Step-size search: double or halve until the one-step acceptance
  /// probability crosses 1/2.
  double find_initial_step(const Vec& q, double logp, const Vec& grad,
                           const Vec& inv_mass, Rng& rng) const {
    double eps = cfg_.init_step_size;
    PhasePoint z0;
    z0.q = q;
    z0.grad = grad;
    z0.logp = logp;
    z0.p.resize(q.size());
    for (Eigen::Index i = 0; i < q.size(); ++i) {
      z0.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
    }
    const double h0 = hamiltonian(z0, inv_mass);
    auto log_accept = [&](double step) {
      PhasePoint z = z0;
      if (!leapfrog(z, step, inv_mass)) return -std::numeric_limits<double>::infinity();
      return h0 - hamiltonian(z, inv_mass);
    };
    const double crit = std::log(0.5);
    double a = log_accept(eps);
    const bool grow = a > crit;
    for (int i = 0; i < 50; ++i) {
      eps = grow ? 2.0 * eps : 0.5 * eps;
      a = log_accept(eps);
      if (grow ? (a <= crit) : (a >= crit)) break;
    }
    return std::clamp(eps, 1e-10, 1e7);
  }

  struct TreeOut {
    Vec q_propose;
    double logp_propose = 0.0;
    Vec grad_propose;
    double log_sum_weight = -std::numeric_limits<double>::infinity();
    double sum_metro = 0.0;
    long n_leapfrog = 0;
    bool divergent = false;
  };

  static bool no_uturn(const Vec& p_sharp_beg, const Vec& p_sharp_end, const Vec& rho) {
    return p_sharp_beg.dot(rho) > 0.0 && p_sharp_end.dot(rho) > 0.0;
  }

  /// Extends the trajectory by 2^depth leapfrog steps from rim state z.
  /// Returns false when the subtree contains a divergence or an internal
  /// U-turn; rho accumulates the subtree momentum sum and p_sharp_beg/end
  /// report the transformed momenta at the subtree boundaries.
  bool build_tree(int depth, PhasePoint& z, double h0, double eps, const Vec& inv_mass,
                  Vec& rho, Vec& p_sharp_beg, Vec& p_sharp_end, TreeOut& out,
                  Rng& rng) const {
    if (depth == 0) {
      const bool finite = leapfrog(z, eps, inv_mass);
      ++out.n_leapfrog;
      double h = finite ? hamiltonian(z, inv_mass) : std::numeric_limits<double>::infinity();
      if (std::isnan(h)) h = std::numeric_limits<double>::infinity();
      const double dh = h0 - h;  // log weight relative to the initial state
      if (-dh > cfg_.max_energy_error) {
        out.divergent = true;
        return false;
      }
      out.log_sum_weight = log_add_exp(out.log_sum_weight, dh);
      out.sum_metro += std::min(1.0, std::exp(dh));
      out.q_propose = z.q;
      out.logp_propose = z.logp;
      out.grad_propose = z.grad;
      p_sharp_beg = inv_mass.cwiseProduct(z.p);
      p_sharp_end = p_sharp_beg;
      rho += z.p;
      return true;
    }

    // left half
    TreeOut left;
    Vec rho_left = Vec::Zero(z.p.size());
    Vec p_sharp_left_end(z.p.size());
    if (!build_tree(depth - 1, z, h0, eps, inv_mass, rho_left, p_sharp_beg,
                    p_sharp_left_end, left, rng)) {
      out.divergent = left.divergent;
      out.n_leapfrog += left.n_leapfrog;
      out.sum_metro += left.sum_metro;
      return false;
    }
    // right half
    TreeOut right;
    Vec rho_right = Vec::Zero(z.p.size());
    Vec p_sharp_right_beg(z.p.size());
    const bool ok = build_tree(depth - 1, z, h0, eps, inv_mass, rho_right,
                               p_sharp_right_beg, p_sharp_end, right, rng);
    out.n_leapfrog += left.n_leapfrog + right.n_leapfrog;
    out.sum_metro += left.sum_metro + right.sum_metro;
    if (!ok) {
      out.divergent = right.divergent;
      return false;
    }

    // multinomial selection between the two halves
    const double lsw = log_add_exp(left.log_sum_weight, right.log_sum_weight);
    const bool take_right =
        rng.uniform() < std::exp(right.log_sum_weight - lsw);
    const TreeOut& pick = take_right ? right : left;
    out.q_propose = pick.q_propose;
    out.logp_propose = pick.logp_propose;
    out.grad_propose = pick.grad_propose;
    out.log_sum_weight = lsw;

    const Vec rho_sub = rho_left + rho_right;
    rho += rho_sub;
    return no_uturn(p_sharp_beg, p_sharp_end, rho_sub);
  }

  TransitionResult transition(Vec& q, double& logp, Vec& grad, double eps,
                              const Vec& inv_mass, Rng& rng) const {
    const auto dim = q.size();
    PhasePoint z_minus, z_plus;
    z_minus.q = q;
    z_minus.grad = grad;
    z_minus.logp = logp;
    z_minus.p.resize(dim);
    for (Eigen::Index i = 0; i < dim; ++i) {
      z_minus.p[i] = rng.normal() / std::sqrt(inv_mass[i]);
    }
    z_plus = z_minus;
    const double h0 = hamiltonian(z_minus, inv_mass);

    Vec rho = z_minus.p;
    Vec p_sharp_minus = inv_mass.cwiseProduct(z_minus.p);
    Vec p_sharp_plus = p_sharp_minus;

    Vec q_sample = q;
    double logp_sample = logp;
    Vec grad_sample = grad;
    double log_sum_weight = 0.0;  // weight of the initial state
    double sum_metro = 0.0;
    long n_leapfrog = 0;
    bool divergent = false;
    int depth = 0;

    while (depth < cfg_.max_tree_depth) {
      TreeOut sub;
      Vec rho_sub = Vec::Zero(dim);
      Vec p_sharp_sub_beg(dim), p_sharp_sub_end(dim);
      bool valid;
      if (rng.next_u64() & 1ULL) {
        valid = build_tree(depth, z_plus, h0, eps, inv_mass, rho_sub,
                           p_sharp_sub_beg, p_sharp_sub_end, sub, rng);
        p_sharp_plus = p_sharp_sub_end;
      } else {
        valid = build_tree(depth, z_minus, h0, -eps, inv_mass, rho_sub,
                           p_sharp_sub_beg, p_sharp_sub_end, sub, rng);
        p_sharp_minus = p_sharp_sub_end;
      }
      n_leapfrog += sub.n_leapfrog;
      sum_metro += sub.sum_metro;
      if (!valid) {
        divergent = sub.divergent;
        break;
      }
      ++depth;

      // biased progressive sampling toward the just-built half
      if (sub.log_sum_weight > log_sum_weight ||
          rng.uniform() < std::exp(sub.log_sum_weight - log_sum_weight)) {
        q_sample = sub.q_propose;
        logp_sample = sub.logp_propose;
        grad_sample = sub.grad_propose;
      }
      log_sum_weight = log_add_exp(log_sum_weight, sub.log_sum_weight);

      rho += rho_sub;
      if (!no_uturn(p_sharp_minus, p_sharp_plus, rho)) break;
    }

    q = q_sample;
    logp = logp_sample;
    grad = grad_sample;
    TransitionResult res;
    res.accept_stat = n_leapfrog > 0 ? sum_metro / static_cast<double>(n_leapfrog) : 0.0;
    res.depth = depth;
    res.divergent = divergent;
    return res;
  }

  const TargetF& target_;
  SamplerConfig cfg_;
};

/// Draws from the target with cfg.chains independent chains (threaded, merged
/// by chain index). The constrain callback maps an unconstrained draw into the
/// stored parameterization; defaults to identity.
template <class TargetF>
PosteriorDraws sample(const TargetF& target, const SamplerConfig& cfg,
                      const std::optional<Vec>& init = std::nullopt,
                      const std::function<Vec(const Vec&)>& constrain = {}) {
  cfg.validate();
  NutsSampler<TargetF> sampler(target, cfg);

  PosteriorDraws out;
  out.chains.resize(cfg.chains);
  std::vector<std::exception_ptr> errors(cfg.chains);

  int nthreads = cfg.threads > 0 ? cfg.threads
                                 : static_cast<int>(std::thread::hardware_concurrency());
  nthreads = std::max(1, std::min(nthreads, cfg.chains));
  auto work = [&](int first) {
    for (int c = first; c < cfg.chains; c += nthreads) {
      try {
        out.chains[c] = sampler.run_chain(c, init);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    }
  };
  if (nthreads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  if (constrain) {
    for (auto& chain : out.chains) {
      Mat constrained;
      for (Eigen::Index s = 0; s < chain.draws.rows(); ++s) {
        const Vec c = constrain(chain.draws.row(s).transpose());
        if (s == 0) constrained.resize(chain.draws.rows(), c.size());
        constrained.row(s) = c.transpose();
      }
      chain.draws = std::move(constrained);
    }
  }
  out.unhealthy_divergences = out.divergent_fraction() > 0.25;
  return out;
}

}  // namespace flame
