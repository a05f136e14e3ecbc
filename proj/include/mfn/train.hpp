#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mfn/data.hpp"
#include "mfn/kernels.hpp"
#include "mfn/mixture.hpp"
#include "mfn/predictors.hpp"

namespace mfn {

enum class TrainScheme { Standalone, MixtureConventional, MixtureDecoupled };

const char* scheme_name(TrainScheme s);
TrainScheme scheme_from_name(const std::string& name);

struct TrainConfig {
  int batch_size = 32;
  int epochs = 10;
  double base_lr = 1e-4;
  double weight_decay = 1e-4;
  double dropout = 0.3;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::uint64_t seed = 0;
  TrainScheme scheme = TrainScheme::Standalone;
  double tau = 0.01;
  double lambda_match = 1.0;

  void validate(std::size_t train_size) const;
};

struct TrainRecord {
  std::size_t step = 0;        // optimizer step index
  std::string component;       // "f", "u", or "single"
  double mse = 0.0;            // mean over the logging window
  double kl = 0.0;             // 0 for standalone / conventional
  double lr = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  TrainScheme scheme = TrainScheme::Standalone;
  std::vector<TrainRecord> records;
  bool diverged = false;

  void write_csv(const std::string& path) const;
};

// Aligned per-component training-error series from a mixture log.
struct ComponentCurves {
  std::vector<std::size_t> steps;
  std::vector<double> factors_mse;
  std::vector<double> fusion_mse;
};

ComponentCurves component_curves(const TrainLog& log);

// Result of a training run: exactly one of predictor/mixture is set.
struct TrainResult {
  std::unique_ptr<Predictor> predictor;
  std::unique_ptr<MixtureModel> mixture;
  TrainLog log;
};

// Trains a standalone predictor (config.scheme must be Standalone).
TrainResult train(const PanelDataset& dataset, const PredictorSpec& spec,
                  const TrainConfig& config);

// Trains a mixture model under the configured scheme. hidden_dim and
// dropout come from the spec-shaped arguments below.
TrainResult train_mixture(const PanelDataset& dataset, int hidden_dim,
                          double dropout_rate, const TrainConfig& config);

// Eval-mode predictions for the chosen split, in dataset order.
std::vector<double> evaluate(const Predictor& model, const PanelDataset& dataset,
                             Split split,
                             kernels::Exec exec = kernels::Exec::Parallel);
std::vector<double> evaluate(const MixtureModel& model,
                             const PanelDataset& dataset, Split split,
                             kernels::Exec exec = kernels::Exec::Parallel);

double mean_squared_error(std::span<const double> predictions,
                          const PanelDataset& dataset, Split split);

// Eval-mode per-component training errors of a mixture (own predictions,
// not the mixture prediction).
std::pair<double, double> component_mse(const MixtureModel& model,
                                        const PanelDataset& dataset,
                                        Split split);

// Checkpoints: JSON manifest `<path>` plus a raw little-endian f32
// parameter payload next to it. Saving rounds the live model's parameters
// to their stored f32 values, so a reload reproduces its predictions
// exactly.
void save_checkpoint(TrainResult& result, const std::string& manifest_path,
                     std::uint64_t seed, std::size_t step);

struct Checkpoint {
  std::unique_ptr<Predictor> predictor;
  std::unique_ptr<MixtureModel> mixture;
  std::uint64_t seed = 0;
  std::size_t step = 0;
};

Checkpoint load_checkpoint(const std::string& manifest_path);

}  // namespace mfn
