#pragma once

#include <span>
#include <vector>

#include "mfn/data.hpp"
#include "mfn/predictors.hpp"

namespace mfn {

// Model input after float-to-double widening.
struct Sample {
  std::vector<double> x_f;
  std::vector<double> x_n;
  double target = 0.0;
};

Sample make_sample(const Instance& inst);

// softmax(-(r - y_f)^2 / tau, -(r - y_u)^2 / tau): the error-based target
// for gate distribution matching. Equals the uniform-prior Gaussian
// posterior with variance tau/2.
std::pair<double, double> target_distribution(double r, double y_f, double y_u,
                                              double tau);

struct DecoupledStepResult {
  double mse_f = 0.0;  // batch-mean squared error of the factors component
  double mse_u = 0.0;  // batch-mean squared error of the fusion component
  double kl = 0.0;     // batch-mean KL matching term
  double total() const { return mse_f + mse_u; }
};

// Two-component gated mixture: a factors-alone component, a
// fusion-combination component, and a linear gate on (x_f + x_n) logits.
class MixtureModel {
 public:
  MixtureModel(int d_f, int d_n, int hidden_dim, double dropout_rate,
               double tau, Rng& rng);

  Predictor& factors_component() { return factors_; }
  Predictor& fusion_component() { return fusion_; }
  const Predictor& factors_component() const { return factors_; }
  const Predictor& fusion_component() const { return fusion_; }
  DenseLayer& gate() { return gate_; }
  const DenseLayer& gate() const { return gate_; }
  double tau() const { return tau_; }
  void set_tau(double tau);

  std::pair<double, double> gate_probs(std::span<const double> x_f,
                                       std::span<const double> x_n) const;

  double predict(std::span<const double> x_f, std::span<const double> x_n,
                 NetMode mode, Rng* rng = nullptr) const;

  // Eq-9 style joint step: loss = mean (r - p_f g_f - p_u g_u)^2 with
  // gradients flowing into both components and the gate. Returns the
  // batch-mean loss; gradients are accumulated, not applied.
  double conventional_loss_step(std::span<const Sample> batch, Rng* rng);

  // Decoupled step: per-component squared errors train the components,
  // the KL term (scaled by lambda_match) trains the gate against detached
  // error-based targets.
  DecoupledStepResult decoupled_loss_step(std::span<const Sample> batch,
                                          Rng* rng, double lambda_match = 1.0);

  // Fraction of split instances whose strictly-lower-error component gets
  // gate probability > 0.5; exact error ties are excluded.
  double gate_error_alignment(const PanelDataset& dataset, Split split) const;

  std::vector<DenseLayer*> all_layers();
  void zero_grad();

 private:
  Predictor factors_;
  Predictor fusion_;
  DenseLayer gate_;
  double tau_;
};

}  // namespace mfn
