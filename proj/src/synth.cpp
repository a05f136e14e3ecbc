#include "mfn/synth.hpp"

#include <cmath>

#include "mfn/rng.hpp"

namespace mfn {

namespace {

std::vector<double> unit_normal_vector(Rng& rng, int dim) {
  std::vector<double> v(dim);
  double norm_sq = 0.0;
  for (auto& x : v) {
    x = rng.normal();
    norm_sq += x * x;
  }
  const double norm = std::sqrt(norm_sq);
  for (auto& x : v) x /= norm;
  return v;
}

// Row-major dim_out x dim_in mixing matrix, scaled so mixed coordinates
// have unit-order variance.
std::vector<double> mixing_matrix(Rng& rng, int dim_out, int dim_in) {
  std::vector<double> m(static_cast<std::size_t>(dim_out) * dim_in);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_in));
  for (auto& x : m) x = rng.normal() * scale;
  return m;
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

std::string regime_name(Regime r) {
  return r == Regime::FactorsOnly ? "FACTORS_ONLY" : "BOTH";
}

Regime regime_from_name(const std::string& name) {
  if (name == "FACTORS_ONLY") return Regime::FactorsOnly;
  if (name == "BOTH") return Regime::Both;
  throw DataError(DataError::Kind::Parse, "unknown regime: " + name);
}

SynthConfig SynthConfig::default_config(std::uint64_t seed) {
  SynthConfig c;
  c.seed = seed;
  c.regime_schedule.resize(c.n_months);
  for (int m = 0; m < c.n_months; ++m) {
    c.regime_schedule[m] =
        ((m / 3) % 2 == 0) ? Regime::FactorsOnly : Regime::Both;
  }
  return c;
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) {
    throw DataError(DataError::Kind::Validation, "synth config: " + msg);
  };
  if (n_stocks <= 0 || n_months <= 0) fail("n_stocks and n_months must be positive");
  if (d_f <= 0 || d_n <= 0) fail("d_f and d_n must be positive");
  if (factor_signal_dim <= 0 || factor_signal_dim > d_f) {
    fail("factor_signal_dim must be in [1, d_f]");
  }
  if (news_signal_dim <= 0 || news_signal_dim > d_n) {
    fail("news_signal_dim must be in [1, d_n]");
  }
  if (noise_std_factors < 0 || noise_std_news < 0 || noise_std_return < 0) {
    fail("noise stds must be nonnegative");
  }
  if (static_cast<int>(regime_schedule.size()) != n_months) {
    fail("regime_schedule length must equal n_months");
  }
}

SynthResult generate(const SynthConfig& config) {
  config.validate();

  Rng structure_rng = Rng::derive(config.seed, 0);
  const auto mix_f = mixing_matrix(structure_rng, config.d_f,
                                   config.factor_signal_dim);
  const auto mix_n = mixing_matrix(structure_rng, config.d_n,
                                   config.news_signal_dim);
  const auto w_f = unit_normal_vector(structure_rng, config.factor_signal_dim);
  const auto w_n = unit_normal_vector(structure_rng, config.news_signal_dim);

  Rng rng = Rng::derive(config.seed, 1);

  SynthResult result;
  PanelDataset& ds = result.dataset;
  ds.d_f = static_cast<std::uint32_t>(config.d_f);
  ds.d_n = static_cast<std::uint32_t>(config.d_n);
  ds.horizon_months = 1;
  const std::size_t total =
      static_cast<std::size_t>(config.n_stocks) * config.n_months;
  ds.instances.reserve(total);
  result.latents.s_f.reserve(total);
  result.latents.s_n.reserve(total);
  result.latents.regime.reserve(total);

  for (int month = 0; month < config.n_months; ++month) {
    const Regime regime = config.regime_schedule[month];
    for (int stock = 0; stock < config.n_stocks; ++stock) {
      std::vector<double> s_f(config.factor_signal_dim);
      for (auto& v : s_f) v = rng.normal();
      std::vector<double> s_n(config.news_signal_dim);
      for (auto& v : s_n) v = rng.normal();

      Instance inst;
      inst.stock_id = static_cast<std::uint32_t>(stock);
      inst.timestamp = static_cast<std::int64_t>(month) * kDaysPerMonth;
      inst.split = Split::Train;
      inst.factors.resize(config.d_f);
      for (int j = 0; j < config.d_f; ++j) {
        double v = 0.0;
        for (int k = 0; k < config.factor_signal_dim; ++k) {
          v += mix_f[static_cast<std::size_t>(j) * config.factor_signal_dim +
                     k] *
               s_f[k];
        }
        inst.factors[j] =
            static_cast<float>(v + config.noise_std_factors * rng.normal());
      }
      inst.news_embedding.resize(config.d_n);
      for (int j = 0; j < config.d_n; ++j) {
        double v = 0.0;
        for (int k = 0; k < config.news_signal_dim; ++k) {
          v += mix_n[static_cast<std::size_t>(j) * config.news_signal_dim +
                     k] *
               s_n[k];
        }
        inst.news_embedding[j] =
            static_cast<float>(v + config.noise_std_news * rng.normal());
      }
      double r = dot(w_f, s_f);
      if (regime == Regime::Both) {
        r += config.beta_news * dot(w_n, s_n);
      }
      r += config.noise_std_return * rng.normal();
      inst.target_return = static_cast<float>(r);

      ds.instances.push_back(std::move(inst));
      result.latents.s_f.push_back(std::move(s_f));
      result.latents.s_n.push_back(std::move(s_n));
      result.latents.regime.push_back(regime);
    }
  }
  ds.normalize_and_validate();
  return result;
}

double oracle_predict(const SynthConfig& config, const SynthLatents& latents,
                      std::size_t instance_index) {
  if (instance_index >= latents.s_f.size()) {
    throw DataError(DataError::Kind::Validation,
                    "latents unavailable for instance " +
                        std::to_string(instance_index));
  }
  Rng structure_rng = Rng::derive(config.seed, 0);
  // Re-derive the seeded weight vectors; matrices precede them in the
  // structure stream.
  (void)mixing_matrix(structure_rng, config.d_f, config.factor_signal_dim);
  (void)mixing_matrix(structure_rng, config.d_n, config.news_signal_dim);
  const auto w_f = unit_normal_vector(structure_rng, config.factor_signal_dim);
  const auto w_n = unit_normal_vector(structure_rng, config.news_signal_dim);

  double r = dot(w_f, latents.s_f[instance_index]);
  if (latents.regime[instance_index] == Regime::Both) {
    r += config.beta_news * dot(w_n, latents.s_n[instance_index]);
  }
  return r;
}

}  // namespace mfn
