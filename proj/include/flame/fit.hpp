#pragma once

#include <string>
#include <vector>

#include "flame/data.hpp"
#include "flame/diagnostics.hpp"
#include "flame/model.hpp"
#include "flame/sampler.hpp"
#include "flame/splines.hpp"

namespace flame {

/// Placement of (beta, gamma, tau) inside a stored draw row.
struct ParamLayout {
  int p = 0;
  int K = 0;

  int dim() const { return p + K + 1; }
  int beta_index(int j) const { return j; }
  int gamma_index(int k) const { return p + k; }
  int tau_index() const { return p + K; }

  std::vector<std::string> names(const std::vector<std::string>& covariates) const {
    std::vector<std::string> out;
    out.reserve(dim());
    for (int j = 0; j < p; ++j) {
      out.push_back("beta[" + (j < static_cast<int>(covariates.size())
                                   ? covariates[j]
                                   : std::to_string(j)) +
                    "]");
    }
    for (int k = 0; k < K; ++k) out.push_back("gamma[" + std::to_string(k + 1) + "]");
    out.push_back("tau");
    return out;
  }
};

/// A fitted model: constrained posterior draws plus everything needed to
/// summarize them.
struct FlameFit {
  ModelSpec spec;
  SamplerConfig sampler;
  KnotVector kv;
  ParamLayout layout;
  std::vector<std::string> covariate_names;
  PosteriorDraws draws;
  Diagnostics diagnostics;

  bool healthy() const { return diagnostics.healthy(sampler.rhat_threshold); }
};

inline FlameFit fit_flame(const Dataset& ds, const ModelSpec& spec,
                          const SamplerConfig& cfg) {
  spec.validate();
  cfg.validate();
  const std::string warning = validate_dataset(ds);
  if (!warning.empty()) {
    std::fprintf(stderr, "warning: %s\n", warning.c_str());
  }
  FlameFit fit;
  fit.spec = spec;
  fit.sampler = cfg;
  fit.kv = build_knots(spec.K, spec.domain_lo, spec.domain_hi);
  fit.layout = ParamLayout{ds.covariate_dim(), spec.K};
  fit.covariate_names = ds.covariate_names;

  const AggregatedDesign agg = aggregate_design(ds, fit.kv);
  const LogPosterior target(agg, spec);
  const ParameterMap map = target.map();
  auto constrain = [map](const Vec& u) {
    const ParameterVector pv = map.constrain(u);
    Vec row(pv.beta.size() + pv.gamma.size() + 1);
    row << pv.beta, pv.gamma, pv.tau;
    return row;
  };
  fit.draws = sample(target, cfg, std::nullopt, constrain);
  fit.diagnostics = diagnose(fit.draws);
  return fit;
}

}  // namespace flame
