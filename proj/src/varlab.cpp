#include "mfn/varlab.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "mfn/rng.hpp"

namespace mfn {

namespace {

struct ScalarMoments {
  std::size_t n = 0;
  double sum = 0.0;
  double sum_sq = 0.0;

  void add(double x) {
    ++n;
    sum += x;
    sum_sq += x * x;
  }
  void merge(const ScalarMoments& o) {
    n += o.n;
    sum += o.sum;
    sum_sq += o.sum_sq;
  }
  double mean() const { return n == 0 ? 0.0 : sum / static_cast<double>(n); }
  double variance() const {  // unbiased
    if (n < 2) return 0.0;
    const double nn = static_cast<double>(n);
    return (sum_sq - sum * sum / nn) / (nn - 1.0);
  }
};

std::vector<double> scaled(const std::vector<double>& v, double c) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = c * v[i];
  return out;
}

VarianceEstimate moments_of(const ComponentGradientSamples& s) {
  VarianceEstimate est;
  est.n = s.p.size();
  ScalarMoments p_m;
  kernels::MomentAccumulator zeta_m, delta_m;
  for (std::size_t i = 0; i < s.p.size(); ++i) {
    p_m.add(s.p[i]);
    zeta_m.add(s.zeta[i]);
    delta_m.add(s.delta[i]);
  }
  est.mean_p = p_m.mean();
  est.var_p = p_m.variance();
  est.var_zeta = zeta_m.trace_variance();
  est.mean_sq_norm_zeta = zeta_m.mean_sq_norm();
  est.var_delta = delta_m.trace_variance();
  return est;
}

}  // namespace

GradientSamples sample_gradients(MixtureModel& model,
                                 const PanelDataset& dataset, Split split,
                                 GradientScheme scheme,
                                 std::size_t max_instances) {
  auto idx = dataset.split_indices(split);
  if (idx.empty()) {
    throw DataError(DataError::Kind::Validation,
                    "sample_gradients: empty split");
  }
  if (max_instances > 0 && idx.size() > max_instances) {
    idx.resize(max_instances);
  }
  GradientSamples out;
  for (std::size_t i : idx) {
    const Sample s = make_sample(dataset.instances[i]);

    Tape tape_f, tape_u;
    const double g_f = model.factors_component().predict(
        s.x_f, s.x_n, NetMode::Eval, nullptr, &tape_f);
    const double g_u = model.fusion_component().predict(
        s.x_f, s.x_n, NetMode::Eval, nullptr, &tape_u);
    const auto [p_f, p_u] = model.gate_probs(s.x_f, s.x_n);

    // grad g_i via a unit upstream gradient on the frozen model.
    model.factors_component().zero_grad();
    model.factors_component().backward(tape_f, 1.0);
    const auto grad_f = model.factors_component().flat_grads();
    model.factors_component().zero_grad();

    model.fusion_component().zero_grad();
    model.fusion_component().backward(tape_u, 1.0);
    const auto grad_u = model.fusion_component().flat_grads();
    model.fusion_component().zero_grad();

    if (scheme == GradientScheme::Mixture) {
      const double resid = s.target - (p_f * g_f + p_u * g_u);
      out.factors.p.push_back(p_f);
      out.fusion.p.push_back(p_u);
      out.factors.zeta.push_back(scaled(grad_f, resid));
      out.fusion.zeta.push_back(scaled(grad_u, resid));
      out.factors.delta.push_back(scaled(out.factors.zeta.back(), -2.0 * p_f));
      out.fusion.delta.push_back(scaled(out.fusion.zeta.back(), -2.0 * p_u));
    } else {
      out.factors.p.push_back(1.0);
      out.fusion.p.push_back(1.0);
      out.factors.zeta.push_back(scaled(grad_f, s.target - g_f));
      out.fusion.zeta.push_back(scaled(grad_u, s.target - g_u));
      out.factors.delta.push_back(scaled(out.factors.zeta.back(), -2.0));
      out.fusion.delta.push_back(scaled(out.fusion.zeta.back(), -2.0));
    }
    for (double v : out.factors.delta.back()) {
      if (!std::isfinite(v)) throw NnError("non-finite gradient sample");
    }
  }
  return out;
}

VarianceEstimate empirical_variance(const ComponentGradientSamples& samples) {
  if (samples.p.size() < 2) {
    throw DataError(DataError::Kind::Validation,
                    "empirical_variance needs N >= 2");
  }
  return moments_of(samples);
}

IdentityReport verify_identity(const IdentitySpec& spec, std::size_t n,
                               kernels::Exec exec) {
  constexpr std::size_t kChunks = 512;
  const std::size_t chunks = std::min(kChunks, n);

  // Fixed chunk partition with per-chunk streams: results do not depend
  // on the thread count.
  std::vector<ScalarMoments> p_chunks(chunks);
  std::vector<kernels::MomentAccumulator> zeta_chunks(chunks), delta_chunks(chunks);
  kernels::parallel_for(exec, chunks, [&](std::size_t c) {
    const std::size_t lo = n * c / chunks;
    const std::size_t hi = n * (c + 1) / chunks;
    Rng rng = Rng::derive(spec.seed, 0xC0 + c);
    std::vector<double> zeta(spec.zeta_dim), delta(spec.zeta_dim);
    for (std::size_t i = lo; i < hi; ++i) {
      const double p = rng.uniform(spec.p_low, spec.p_high);
      for (int j = 0; j < spec.zeta_dim; ++j) {
        zeta[j] = rng.normal(spec.zeta_mean, spec.zeta_std);
        delta[j] = -2.0 * p * zeta[j];
      }
      p_chunks[c].add(p);
      zeta_chunks[c].add(zeta);
      delta_chunks[c].add(delta);
    }
  });
  ScalarMoments p_m;
  kernels::MomentAccumulator zeta_m, delta_m;
  for (std::size_t c = 0; c < chunks; ++c) {
    p_m.merge(p_chunks[c]);
    zeta_m.merge(zeta_chunks[c]);
    delta_m.merge(delta_chunks[c]);
  }

  IdentityReport rep;
  rep.n = n;
  const double mean_p = 0.5 * (spec.p_low + spec.p_high);
  const double var_p =
      (spec.p_high - spec.p_low) * (spec.p_high - spec.p_low) / 12.0;
  const double var_zeta = spec.zeta_dim * spec.zeta_std * spec.zeta_std;
  const double mean_sq_zeta =
      spec.zeta_dim *
      (spec.zeta_std * spec.zeta_std + spec.zeta_mean * spec.zeta_mean);
  rep.closed_form = 4.0 * mean_p * mean_p * var_zeta +
                    4.0 * mean_sq_zeta * var_p;
  rep.empirical = delta_m.trace_variance();
  rep.relative_gap = std::abs(rep.empirical - rep.closed_form) /
                     std::abs(rep.closed_form);
  rep.mean_p = p_m.mean();
  rep.var_p = p_m.variance();
  rep.var_zeta = zeta_m.trace_variance();
  rep.mean_sq_norm_zeta = zeta_m.mean_sq_norm();
  return rep;
}

std::string IdentityReport::to_json() const {
  nlohmann::ordered_json j;
  j["n"] = n;
  j["closed_form"] = closed_form;
  j["empirical"] = empirical;
  j["relative_gap"] = relative_gap;
  j["moments"] = {{"mean_p", mean_p},
                  {"var_p", var_p},
                  {"var_zeta", var_zeta},
                  {"mean_sq_norm_zeta", mean_sq_norm_zeta}};
  return j.dump(2);
}

EntanglementReport training_entanglement_probe(MixtureModel& model,
                                               const PanelDataset& dataset,
                                               Split split,
                                               std::size_t max_instances) {
  const auto samples = sample_gradients(model, dataset, split,
                                        GradientScheme::Mixture, max_instances);
  auto term = [](const ComponentGradientSamples& s) {
    EntanglementTerm t;
    t.moments = moments_of(s);
    t.term_expectation_sq_p =
        4.0 * t.moments.mean_p * t.moments.mean_p * t.moments.var_zeta;
    t.term_var_p = 4.0 * t.moments.mean_sq_norm_zeta * t.moments.var_p;
    return t;
  };
  return {term(samples.factors), term(samples.fusion)};
}

std::string EntanglementReport::to_json() const {
  auto term_json = [](const EntanglementTerm& t) {
    return nlohmann::ordered_json{
        {"term_expectation_sq_p", t.term_expectation_sq_p},
        {"term_var_p", t.term_var_p},
        {"n", t.moments.n},
        {"mean_p", t.moments.mean_p},
        {"var_p", t.moments.var_p},
        {"var_zeta", t.moments.var_zeta},
        {"mean_sq_norm_zeta", t.moments.mean_sq_norm_zeta},
        {"var_delta", t.moments.var_delta},
        {"note", "diagnostic decomposition; p and zeta are not independent "
                 "on real training data"}};
  };
  nlohmann::ordered_json j;
  j["factors"] = term_json(factors);
  j["fusion"] = term_json(fusion);
  return j.dump(2);
}

}  // namespace mfn
