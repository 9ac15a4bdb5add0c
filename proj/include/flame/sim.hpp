#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "flame/common.hpp"
#include "flame/data.hpp"
#include "flame/inference.hpp"
#include "flame/rng.hpp"

namespace flame {

enum class RafShape { linear, piecewise_linear, logarithm, sigmoid };

inline std::string to_string(RafShape s) {
  switch (s) {
    case RafShape::linear: return "linear";
    case RafShape::piecewise_linear: return "piecewise_linear";
    case RafShape::logarithm: return "logarithm";
    case RafShape::sigmoid: return "sigmoid";
  }
  throw config_error("unknown RAF shape");
}

inline RafShape raf_shape_from_string(const std::string& s) {
  if (s == "linear") return RafShape::linear;
  if (s == "piecewise_linear" || s == "piecewise") return RafShape::piecewise_linear;
  if (s == "logarithm" || s == "log") return RafShape::logarithm;
  if (s == "sigmoid") return RafShape::sigmoid;
  throw config_error("unknown RAF shape '" + s +
                     "' (expected linear, piecewise_linear, logarithm, or sigmoid)");
}

/// One of the closed-form truths used in the recovery experiments, calibrated
/// so the generative process lands near a 10/30/50% event rate.
struct TrueRaf {
  RafShape shape = RafShape::linear;
  int event_rate_pct = 30;

  double scale() const {
    switch (shape) {
      case RafShape::linear:
        return pick(0.03, 0.065, 0.1);
      case RafShape::piecewise_linear:
        return pick(0.1, 0.25, 0.45);
      case RafShape::logarithm:
        return pick(0.06, 0.12, 0.2);
      case RafShape::sigmoid:
        return pick(0.2, 0.4, 0.6);
    }
    throw config_error("unknown RAF shape");
  }

 private:
  double pick(double r10, double r30, double r50) const {
    switch (event_rate_pct) {
      case 10: return r10;
      case 30: return r30;
      case 50: return r50;
      default:
        throw config_error("event rate must be 10, 30, or 50 (percent), got " +
                           std::to_string(event_rate_pct));
    }
  }
};

inline double true_raf_eval(const TrueRaf& tr, double z) {
  const double a = tr.scale();
  switch (tr.shape) {
    case RafShape::linear:
      return a / 3.0 * z;
    case RafShape::piecewise_linear:
      return z > 15.0 ? a / 3.0 * (z - 15.0) : 0.0;
    case RafShape::logarithm:
      return a * std::log(z + 1.0);
    case RafShape::sigmoid:
      return a / (1.0 + 1000.0 * std::exp(-z));
  }
  throw config_error("unknown RAF shape");
}

struct SimConfig {
  int I = 1000;
  int K = 30;
  TrueRaf raf;
  int replicates = 20;
  std::uint64_t seed = 0;
  int max_episode_count = 15;   // J_i uniform on {0, ..., max}
  double duration_max = 30.0;   // durations uniform on (0, duration_max]
  double beta0 = -3.5;
  double beta1 = 0.1;

  void validate() const {
    if (I < 50) throw config_error("sim: need at least 50 subjects");
    if (replicates < 1) throw config_error("sim: need at least 1 replicate");
    if (max_episode_count < 0) throw config_error("sim: max episode count must be >= 0");
    if (!(duration_max > 0.0)) throw config_error("sim: duration_max must be positive");
  }
};

/// Draws one synthetic dataset. Every subject owns an RNG substream keyed by
/// (seed, replicate, subject), so the dataset is identical no matter how
/// generation is scheduled.
inline Dataset generate_dataset(const SimConfig& cfg, int replicate_index) {
  cfg.validate();
  Dataset ds;
  ds.covariate_names = {"intercept", "x1"};
  ds.subjects.resize(cfg.I);
  for (int i = 0; i < cfg.I; ++i) {
    Rng rng(cfg.seed, static_cast<std::uint64_t>(replicate_index),
            static_cast<std::uint64_t>(i), 0x53494D5355424AULL);
    auto& s = ds.subjects[i];
    s.id = "s" + std::to_string(i + 1);
    const double x1 = rng.normal();
    s.x = {1.0, x1};
    const int j_count = rng.uniform_int(0, cfg.max_episode_count);
    std::vector<double> starts(j_count);
    for (int j = 0; j < j_count; ++j) starts[j] = rng.uniform(0.0, 480.0);
    std::sort(starts.begin(), starts.end());
    s.episodes.resize(j_count);
    double risk = 0.0;
    for (int j = 0; j < j_count; ++j) {
      const double z = cfg.duration_max * rng.uniform_pos();  // (0, max]
      s.episodes[j] = Episode{z, starts[j]};
      risk += true_raf_eval(cfg.raf, z);
    }
    const double eta = cfg.beta0 + cfg.beta1 * x1 + risk;
    s.y = rng.uniform() < expit(eta) ? 1 : 0;
  }
  return ds;
}

/// Integrated squared error of the posterior-mean curve against the truth on
/// [0, 30], by the trapezoid rule on a 3001-point uniform grid. The estimate
/// is interpolated linearly onto that grid.
inline double ise(const RafEstimate& est, const TrueRaf& tr) {
  constexpr double lo = 0.0, hi = 30.0;
  constexpr int n = 3001;
  if (est.grid.empty() || est.grid.front() > lo + 1e-9 || est.grid.back() < hi - 1e-9) {
    throw config_error("ise: estimate grid must span [0, 30]");
  }
  auto interp = [&](double z) {
    const auto it = std::upper_bound(est.grid.begin(), est.grid.end(), z);
    if (it == est.grid.begin()) return est.mean.front();
    if (it == est.grid.end()) return est.mean.back();
    const auto hi_idx = static_cast<std::size_t>(it - est.grid.begin());
    const auto lo_idx = hi_idx - 1;
    const double t = (z - est.grid[lo_idx]) / (est.grid[hi_idx] - est.grid[lo_idx]);
    return est.mean[lo_idx] + t * (est.mean[hi_idx] - est.mean[lo_idx]);
  };
  double acc = 0.0;
  const double h = (hi - lo) / (n - 1);
  for (int g = 0; g < n; ++g) {
    const double z = lo + h * g;
    const double d = interp(z) - true_raf_eval(tr, z);
    const double w = (g == 0 || g == n - 1) ? 0.5 : 1.0;
    acc += w * d * d;
  }
  return acc * h;
}

}  // namespace flame
