#include "mfn/mixture.hpp"

#include <array>
#include <cmath>

namespace mfn {

Sample make_sample(const Instance& inst) {
  Sample s;
  s.x_f.assign(inst.factors.begin(), inst.factors.end());
  s.x_n.assign(inst.news_embedding.begin(), inst.news_embedding.end());
  s.target = static_cast<double>(inst.target_return);
  return s;
}

std::pair<double, double> target_distribution(double r, double y_f, double y_u,
                                              double tau) {
  if (tau <= 0.0) {
    throw NnError("target_distribution requires tau > 0");
  }
  const double e_f = (r - y_f) * (r - y_f);
  const double e_u = (r - y_u) * (r - y_u);
  const std::array<double, 2> logits{-e_f / tau, -e_u / tau};
  const auto q = softmax(logits);
  return {q[0], q[1]};
}

MixtureModel::MixtureModel(int d_f, int d_n, int hidden_dim,
                           double dropout_rate, double tau, Rng& rng)
    : factors_(PredictorSpec{PredictorKind::FactorsAlone, d_f, d_n, hidden_dim,
                             dropout_rate},
               rng),
      fusion_(PredictorSpec{PredictorKind::FusionCombination, d_f, d_n,
                            hidden_dim, dropout_rate},
              rng),
      gate_("gate", d_f + d_n, 2, Activation::Identity),
      tau_(tau) {
  if (tau <= 0.0) throw NnError("mixture tau must be positive");
  gate_.init(rng);
}

void MixtureModel::set_tau(double tau) {
  if (tau <= 0.0) throw NnError("mixture tau must be positive");
  tau_ = tau;
}

std::pair<double, double> MixtureModel::gate_probs(
    std::span<const double> x_f, std::span<const double> x_n) const {
  const auto logits = gate_.forward(concat(x_f, x_n), nullptr);
  const auto p = softmax(logits);
  return {p[0], p[1]};
}

double MixtureModel::predict(std::span<const double> x_f,
                             std::span<const double> x_n, NetMode mode,
                             Rng* rng) const {
  const auto [p_f, p_u] = gate_probs(x_f, x_n);
  const double g_f = factors_.predict(x_f, x_n, mode, rng);
  const double g_u = fusion_.predict(x_f, x_n, mode, rng);
  return p_f * g_f + p_u * g_u;
}

double MixtureModel::conventional_loss_step(std::span<const Sample> batch,
                                            Rng* rng) {
  if (batch.empty()) throw NnError("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const Sample& s : batch) {
    Tape tape_f, tape_u;
    const double g_f = factors_.predict(s.x_f, s.x_n, NetMode::Train, rng,
                                        &tape_f);
    const double g_u = fusion_.predict(s.x_f, s.x_n, NetMode::Train, rng,
                                       &tape_u);
    DenseCache gate_cache;
    const auto logits = gate_.forward(concat(s.x_f, s.x_n), &gate_cache);
    const auto p = softmax(logits);
    const double pred = p[0] * g_f + p[1] * g_u;
    const double resid = s.target - pred;
    loss += resid * resid * inv_n;

    // d loss / d g_i = -2 p_i (r - r_hat) / n
    factors_.backward(tape_f, -2.0 * p[0] * resid * inv_n);
    fusion_.backward(tape_u, -2.0 * p[1] * resid * inv_n);
    // d r_hat / d logit_j = p_j (g_j - r_hat)
    const std::array<double, 2> grad_logits{
        -2.0 * resid * inv_n * p[0] * (g_f - pred),
        -2.0 * resid * inv_n * p[1] * (g_u - pred)};
    gate_.backward(gate_cache, grad_logits);
  }
  if (!std::isfinite(loss)) throw NnError("non-finite mixture loss");
  return loss;
}

DecoupledStepResult MixtureModel::decoupled_loss_step(
    std::span<const Sample> batch, Rng* rng, double lambda_match) {
  if (batch.empty()) throw NnError("empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  DecoupledStepResult res;
  for (const Sample& s : batch) {
    Tape tape_f, tape_u;
    const double g_f = factors_.predict(s.x_f, s.x_n, NetMode::Train, rng,
                                        &tape_f);
    const double g_u = fusion_.predict(s.x_f, s.x_n, NetMode::Train, rng,
                                       &tape_u);
    const double resid_f = s.target - g_f;
    const double resid_u = s.target - g_u;
    res.mse_f += resid_f * resid_f * inv_n;
    res.mse_u += resid_u * resid_u * inv_n;

    // Independent training: each component sees only its own residual.
    factors_.backward(tape_f, -2.0 * resid_f * inv_n);
    fusion_.backward(tape_u, -2.0 * resid_u * inv_n);

    // Distribution matching: targets are computed from the pre-update
    // component predictions and carry no gradient.
    const auto [q_f, q_u] = target_distribution(s.target, g_f, g_u, tau_);
    DenseCache gate_cache;
    const auto logits = gate_.forward(concat(s.x_f, s.x_n), &gate_cache);
    const auto p = softmax(logits);
    const std::array<double, 2> q{q_f, q_u};
    const double kl = kl_discrete(p, q);
    res.kl += kl * inv_n;
    // d KL / d logit_k = p_k (ln(p_k/q_k) - KL)
    std::array<double, 2> grad_logits{};
    for (int k = 0; k < 2; ++k) {
      grad_logits[k] = lambda_match * inv_n * p[k] *
                       (std::log(p[k] / std::max(q[k], 1e-12)) - kl);
    }
    gate_.backward(gate_cache, grad_logits);
  }
  if (!std::isfinite(res.total()) || !std::isfinite(res.kl)) {
    throw NnError("non-finite decoupled loss");
  }
  return res;
}

double MixtureModel::gate_error_alignment(const PanelDataset& dataset,
                                          Split split) const {
  const auto idx = dataset.split_indices(split);
  if (idx.empty()) {
    throw DataError(DataError::Kind::Validation,
                    "gate_error_alignment: empty split");
  }
  std::size_t considered = 0, aligned = 0;
  for (std::size_t i : idx) {
    const Sample s = make_sample(dataset.instances[i]);
    const double g_f = factors_.predict(s.x_f, s.x_n, NetMode::Eval);
    const double g_u = fusion_.predict(s.x_f, s.x_n, NetMode::Eval);
    const double e_f = (s.target - g_f) * (s.target - g_f);
    const double e_u = (s.target - g_u) * (s.target - g_u);
    if (e_f == e_u) continue;  // ties excluded
    ++considered;
    const auto [p_f, p_u] = gate_probs(s.x_f, s.x_n);
    const double winner_prob = e_f < e_u ? p_f : p_u;
    if (winner_prob > 0.5) ++aligned;
  }
  if (considered == 0) return 0.0;
  return static_cast<double>(aligned) / static_cast<double>(considered);
}

std::vector<DenseLayer*> MixtureModel::all_layers() {
  auto out = factors_.layers();
  for (auto* l : fusion_.layers()) out.push_back(l);
  out.push_back(&gate_);
  return out;
}

void MixtureModel::zero_grad() {
  factors_.zero_grad();
  fusion_.zero_grad();
  gate_.zero_grad();
}

}  // namespace mfn
