#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfn/rng.hpp"

namespace mfn {

struct NnError : std::runtime_error {
  explicit NnError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Activation { Identity, Relu };

// Recorded intermediates for one dense forward pass.
struct DenseCache {
  std::vector<double> input;
  std::vector<double> pre;  // pre-activation, kept only for ReLU layers
};

// Fully connected layer with gradient accumulators. Weights are row-major
// (out_dim x in_dim); all math is in 64-bit floats.
struct DenseLayer {
  std::string name;
  int in_dim = 0;
  int out_dim = 0;
  Activation act = Activation::Identity;
  bool has_bias = true;

  std::vector<double> w, b;
  std::vector<double> gw, gb;

  DenseLayer() = default;
  DenseLayer(std::string layer_name, int in, int out, Activation a,
             bool bias = true);

  // Glorot-uniform weights, zero biases.
  void init(Rng& rng);
  void set_zero_params();

  std::vector<double> forward(std::span<const double> x,
                              DenseCache* cache) const;
  // Accumulates gw/gb from the cached forward; returns the input gradient.
  std::vector<double> backward(const DenseCache& cache,
                               std::span<const double> grad_out);

  void zero_grad();
  std::size_t param_count() const;
};

// Numerically stable softmax (max subtraction).
std::vector<double> softmax(std::span<const double> logits);

// Sum p_i ln(p_i/q_i) with the 0 ln 0 convention; q is clamped below at
// 1e-12.
double kl_discrete(std::span<const double> p, std::span<const double> q);

enum class NetMode { Train, Eval };

// Inverted dropout: survivors are pre-scaled by 1/(1-rate) so eval is the
// identity. The returned mask holds the per-coordinate multipliers.
std::vector<double> dropout(std::span<const double> x, double rate,
                            NetMode mode, Rng* rng, std::vector<double>* mask);

// base_lr * (1 - step/total_steps).
double linear_decay_lr(std::size_t step, std::size_t total_steps,
                       double base_lr);

enum class OptimizerKind { Adam, Sgd };

// Drives parameter updates for a set of layers. Adam uses beta = (0.9,
// 0.999), eps = 1e-8 with bias correction; weight decay is decoupled
// (applied directly to parameters).
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, std::vector<DenseLayer*> layers,
            double weight_decay);

  // Applies one update at the given learning rate and zeroes gradients.
  // Throws NnError naming the layer on non-finite gradients.
  void step(double lr);
  void zero_grad();
  std::size_t step_count() const { return step_; }

 private:
  struct Slot {
    DenseLayer* layer;
    std::vector<double> mw, vw, mb, vb;
  };
  OptimizerKind kind_;
  double weight_decay_;
  std::size_t step_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace mfn
