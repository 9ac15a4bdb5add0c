#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "flame/fit.hpp"
#include "flame/inference.hpp"
#include "flame/sim.hpp"

namespace flame {

/// Grid of recovery experiments: every (shape, event rate, I, K) cell is run
/// for `replicates` independently generated datasets and scored by ISE.
struct BenchmarkGrid {
  std::vector<RafShape> shapes = {RafShape::linear};
  std::vector<int> event_rates = {30};
  std::vector<int> sample_sizes = {1000, 2000};
  std::vector<int> basis_sizes = {30};
  int replicates = 20;
  std::uint64_t seed = 0;
  SamplerConfig sampler = desk_sampler();
  int threads = 0;  // 0 = hardware concurrency

  /// Lean sampler configuration for replicate sweeps; the posterior-mean
  /// curve needs far fewer draws than full interval inference.
  static SamplerConfig desk_sampler() {
    SamplerConfig cfg;
    cfg.chains = 2;
    cfg.warmup = 500;
    cfg.samples = 500;
    return cfg;
  }
};

struct BenchmarkRow {
  RafShape shape = RafShape::linear;
  int event_rate_pct = 0;
  int I = 0;
  int K = 0;
  int replicates = 0;  // replicates contributing to the mean
  int failures = 0;    // replicates excluded (sampler error)
  double mean_ise = 0.0;
  double mc_se = 0.0;
};

/// Fits one simulated replicate and scores the posterior-mean RAF.
inline double replicate_ise(const SimConfig& sim, int replicate,
                            const SamplerConfig& sampler_cfg) {
  const Dataset ds = generate_dataset(sim, replicate);
  ModelSpec spec;
  spec.K = sim.K;
  spec.domain_lo = 0.0;
  spec.domain_hi = sim.duration_max;
  SamplerConfig cfg = sampler_cfg;
  cfg.seed = Rng(sim.seed, static_cast<std::uint64_t>(replicate), 0xF17ULL).next_u64();
  cfg.threads = 1;  // replicates parallelize, chains stay sequential
  const FlameFit fit = fit_flame(ds, spec, cfg);
  const RafEstimate est = raf_curve(fit.draws, fit.layout, fit.kv, 0.01);
  return ise(est, sim.raf);
}

inline std::vector<BenchmarkRow> run_benchmark(const BenchmarkGrid& grid,
                                               std::FILE* progress = nullptr) {
  std::vector<BenchmarkRow> rows;
  for (const RafShape shape : grid.shapes) {
    for (const int rate : grid.event_rates) {
      for (const int I : grid.sample_sizes) {
        for (const int K : grid.basis_sizes) {
          SimConfig sim;
          sim.I = I;
          sim.K = K;
          sim.raf = TrueRaf{shape, rate};
          sim.replicates = grid.replicates;
          sim.seed = grid.seed;

          std::vector<double> ises(grid.replicates,
                                   std::numeric_limits<double>::quiet_NaN());
          int nthreads = grid.threads > 0
                             ? grid.threads
                             : static_cast<int>(std::thread::hardware_concurrency());
          nthreads = std::max(1, std::min(nthreads, grid.replicates));
          auto work = [&](int first) {
            for (int r = first; r < grid.replicates; r += nthreads) {
              try {
                ises[r] = replicate_ise(sim, r, grid.sampler);
              } catch (const std::exception&) {
                // left as NaN; counted as a failure below
              }
            }
          };
          if (nthreads == 1) {
            work(0);
          } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < nthreads; ++t) pool.emplace_back(work, t);
            for (auto& th : pool) th.join();
          }

          BenchmarkRow row;
          row.shape = shape;
          row.event_rate_pct = rate;
          row.I = I;
          row.K = K;
          double sum = 0.0;
          for (double v : ises) {
            if (std::isnan(v)) {
              ++row.failures;
            } else {
              sum += v;
              ++row.replicates;
            }
          }
          if (row.replicates > 0) {
            row.mean_ise = sum / row.replicates;
            double var = 0.0;
            for (double v : ises) {
              if (!std::isnan(v)) var += (v - row.mean_ise) * (v - row.mean_ise);
            }
            row.mc_se = row.replicates > 1
                            ? std::sqrt(var / (row.replicates - 1.0) / row.replicates)
                            : 0.0;
          }
          rows.push_back(row);
          if (progress) {
            std::fprintf(progress, "benchmark %s rate=%d I=%d K=%d: mean ISE %.4f (se %.4f, %d ok, %d failed)\n",
                         to_string(shape).c_str(), rate, I, K, row.mean_ise,
                         row.mc_se, row.replicates, row.failures);
            std::fflush(progress);
          }
        }
      }
    }
  }
  return rows;
}

inline void write_benchmark_csv(const std::vector<BenchmarkRow>& rows,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open '" + path + "' for writing");
  out << "shape,event_rate,I,K,replicates,mean_ise,mc_se,failures\n";
  char buf[64];
  for (const auto& r : rows) {
    out << to_string(r.shape) << ',' << r.event_rate_pct << ',' << r.I << ',' << r.K
        << ',' << r.replicates << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.mean_ise);
    out << buf << ',';
    std::snprintf(buf, sizeof buf, "%.17g", r.mc_se);
    out << buf << ',' << r.failures << '\n';
  }
}

}  // namespace flame
