#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mfn/nn.hpp"

namespace mfn {

enum class PredictorKind {
  FactorsAlone,
  NewsAlone,
  Finin,
  FusionCombination,
  FusionSummation,
  FusionAttention,
};

const char* predictor_kind_name(PredictorKind k);
PredictorKind predictor_kind_from_name(const std::string& name);

struct PredictorSpec {
  PredictorKind kind = PredictorKind::FactorsAlone;
  int d_f = 0;
  int d_n = 0;
  int hidden_dim = 64;
  double dropout_rate = 0.3;
};

// Per-forward record sufficient for exact reverse-mode differentiation.
// Single use, single thread.
struct Tape {
  std::vector<DenseCache> caches;
  std::vector<double> drop_mask;
  // Kind-specific intermediates (projections, attention weights, ...).
  std::vector<std::vector<double>> vecs;
  std::vector<double> scalars;
  bool consumed = false;
};

struct InputGrads {
  std::vector<double> d_xf;
  std::vector<double> d_xn;
};

// One of the six single-head return predictors. Layer stacks follow the
// spec in build(); dropout applies to the input of the final linear
// output layer only.
class Predictor {
 public:
  Predictor(const PredictorSpec& spec, Rng& rng);

  const PredictorSpec& spec() const { return spec_; }

  // Train mode applies dropout (rng required) and, with a tape, records
  // intermediates for backward. Eval mode is deterministic.
  double predict(std::span<const double> x_f, std::span<const double> x_n,
                 NetMode mode, Rng* rng = nullptr, Tape* tape = nullptr) const;

  // Accumulates parameter gradients for upstream d(loss)/d(output);
  // returns gradients w.r.t. the inputs. A tape can be consumed once.
  InputGrads backward(Tape& tape, double grad_output);

  // Softmax modality weights (FUSION_ATTENTION only).
  std::pair<double, double> attention_weights(std::span<const double> x_f,
                                              std::span<const double> x_n) const;

  // Layers in the documented checkpoint/parameter order.
  std::vector<DenseLayer*> layers();
  std::vector<const DenseLayer*> layers() const;
  std::size_t param_count() const;
  void zero_grad();
  // Concatenated (w, b) gradients in layer order.
  std::vector<double> flat_grads() const;

 private:
  void check_dims(std::span<const double> x_f,
                  std::span<const double> x_n) const;

  PredictorSpec spec_;
  int bottleneck_dim_ = 0;          // FusionCombination: ceil(d_n / 2)
  bool has_skip_projection_ = false; // FactorsAlone with d_f != hidden_dim
  std::vector<DenseLayer> layers_;
};

std::vector<double> concat(std::span<const double> a, std::span<const double> b);

}  // namespace mfn
