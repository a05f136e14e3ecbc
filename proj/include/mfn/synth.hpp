#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfn/data.hpp"

namespace mfn {

enum class Regime : std::uint8_t { FactorsOnly = 0, Both = 1 };

struct SynthConfig {
  int n_stocks = 100;
  int n_months = 36;
  int d_f = 20;
  int d_n = 32;
  int factor_signal_dim = 4;  // k_f
  int news_signal_dim = 4;    // k_n
  double noise_std_factors = 0.1;
  double noise_std_news = 0.1;
  double noise_std_return = 0.03;
  std::vector<Regime> regime_schedule;  // length n_months
  double beta_news = 1.0;
  std::uint64_t seed = 0;

  // Desk-scale default: alternating 3-month regime blocks starting with
  // FACTORS_ONLY.
  static SynthConfig default_config(std::uint64_t seed);

  void validate() const;  // throws DataError::Kind::Validation
};

// Latent state retained per instance, in dataset (month, stock) order.
struct SynthLatents {
  std::vector<std::vector<double>> s_f;
  std::vector<std::vector<double>> s_n;
  std::vector<Regime> regime;
};

struct SynthResult {
  PanelDataset dataset;
  SynthLatents latents;
};

// Deterministic generator. Draw order: (1) mixing matrices A, B and
// unit-norm weight vectors w_f, w_n from a structure stream derived from
// the seed; (2) per-instance draws from a second stream in (month, stock)
// lexicographic order: s_f, s_n, factor noise, news noise, return noise.
SynthResult generate(const SynthConfig& config);

// Conditional mean of r given latents and regime (the noiseless return).
double oracle_predict(const SynthConfig& config, const SynthLatents& latents,
                      std::size_t instance_index);

// Month timestamps are spaced kDaysPerMonth epoch-days apart.
constexpr std::int64_t kDaysPerMonth = 30;

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

}  // namespace mfn
