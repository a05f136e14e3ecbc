#pragma once

#include <string>
#include <vector>

#include "mfn/data.hpp"
#include "mfn/kernels.hpp"
#include "mfn/mixture.hpp"

namespace mfn {

enum class GradientScheme { Mixture, Standalone };

// Per-instance gradient samples for one prediction component.
struct ComponentGradientSamples {
  std::vector<double> p;                  // gate probability per instance
  std::vector<std::vector<double>> zeta;  // (r - r_hat) * grad g
  std::vector<std::vector<double>> delta; // stochastic parameter gradient
};

struct GradientSamples {
  ComponentGradientSamples factors;
  ComponentGradientSamples fusion;
};

// Moment summary; "variance" of a vector is the trace convention
// E||v - Ev||^2 (unbiased estimates).
struct VarianceEstimate {
  std::size_t n = 0;
  double mean_p = 0.0;
  double var_p = 0.0;
  double var_zeta = 0.0;
  double mean_sq_norm_zeta = 0.0;
  double var_delta = 0.0;
};

// Analytic per-instance gradients on a frozen model. Mixture scheme:
// delta_i = -2 p_i (r - r_hat) grad g_i with the mixture prediction;
// standalone: delta_i = -2 (r - g_i) grad g_i and p_i is reported as 1.
GradientSamples sample_gradients(MixtureModel& model,
                                 const PanelDataset& dataset, Split split,
                                 GradientScheme scheme,
                                 std::size_t max_instances = 0);

VarianceEstimate empirical_variance(const ComponentGradientSamples& samples);

// Independent-sampler spec for the variance identity: p ~ Uniform(p_low,
// p_high), zeta coordinates iid N(zeta_mean, zeta_std).
struct IdentitySpec {
  double p_low = 0.2;
  double p_high = 0.8;
  int zeta_dim = 1;
  double zeta_mean = 1.0;
  double zeta_std = 1.0;
  std::uint64_t seed = 0;
};

struct IdentityReport {
  std::size_t n = 0;
  double closed_form = 0.0;   // 4 E^2[p] Var(zeta) + 4 E[||zeta||^2] Var(p)
  double empirical = 0.0;     // trace Var(-2 p zeta), Monte Carlo
  double relative_gap = 0.0;
  double mean_p = 0.0;
  double var_p = 0.0;
  double var_zeta = 0.0;
  double mean_sq_norm_zeta = 0.0;

  std::string to_json() const;
};

IdentityReport verify_identity(const IdentitySpec& spec, std::size_t n,
                               kernels::Exec exec = kernels::Exec::Parallel);

// Diagnostic decomposition of the two entanglement terms on real training
// data; p and zeta are not independent here, so the terms are reported
// separately rather than summed into a variance claim.
struct EntanglementTerm {
  double term_expectation_sq_p = 0.0;  // 4 E^2[p] Var(zeta)
  double term_var_p = 0.0;             // 4 E[||zeta||^2] Var(p)
  VarianceEstimate moments;
};

struct EntanglementReport {
  EntanglementTerm factors;
  EntanglementTerm fusion;

  std::string to_json() const;
};

EntanglementReport training_entanglement_probe(MixtureModel& model,
                                               const PanelDataset& dataset,
                                               Split split,
                                               std::size_t max_instances);

}  // namespace mfn
