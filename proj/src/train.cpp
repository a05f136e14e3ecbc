#include "mfn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mfn {

namespace {

using json = nlohmann::json;

std::vector<Sample> collect_samples(const PanelDataset& dataset, Split split) {
  std::vector<Sample> out;
  for (const auto& inst : dataset.instances) {
    if (inst.split == split) out.push_back(make_sample(inst));
  }
  return out;
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(idx[i - 1], idx[j]);
  }
}

std::vector<std::vector<double>> snapshot_params(
    const std::vector<DenseLayer*>& layers) {
  std::vector<std::vector<double>> snap;
  for (const auto* l : layers) {
    snap.push_back(l->w);
    snap.push_back(l->b);
  }
  return snap;
}

void restore_params(const std::vector<DenseLayer*>& layers,
                    const std::vector<std::vector<double>>& snap) {
  std::size_t k = 0;
  for (auto* l : layers) {
    l->w = snap[k++];
    l->b = snap[k++];
  }
}

struct LogWindow {
  double sum_f = 0.0, sum_u = 0.0, sum_single = 0.0, sum_kl = 0.0;
  std::size_t batches = 0;
  void reset() { *this = LogWindow{}; }
};

void emit_records(TrainLog& log, TrainScheme scheme, const LogWindow& win,
                  std::size_t step, double lr, double wall) {
  if (win.batches == 0) return;
  const double inv = 1.0 / static_cast<double>(win.batches);
  if (scheme == TrainScheme::Standalone) {
    log.records.push_back({step, "single", win.sum_single * inv, 0.0, lr, wall});
  } else {
    log.records.push_back({step, "f", win.sum_f * inv, win.sum_kl * inv, lr,
                           wall});
    log.records.push_back({step, "u", win.sum_u * inv, win.sum_kl * inv, lr,
                           wall});
  }
}

constexpr int kLogEveryBatches = 50;

// Shared epoch/batch driver; `run_batch` accumulates gradients and fills
// the log window for one batch.
template <typename RunBatch>
TrainLog run_training(std::vector<Sample> samples, const TrainConfig& config,
                      Optimizer& opt, const std::vector<DenseLayer*>& layers,
                      RunBatch&& run_batch) {
  TrainLog log;
  log.scheme = config.scheme;
  if (config.epochs == 0) return log;

  const std::size_t n = samples.size();
  const std::size_t batches_per_epoch =
      (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches_per_epoch * config.epochs;

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  Rng dropout_rng = Rng::derive(config.seed, 0xD0);
  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  auto last_good = snapshot_params(layers);
  std::size_t step = 0;
  LogWindow win;
  std::vector<Sample> batch;
  double lr = config.base_lr;
  try {
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      Rng shuffle_rng = Rng::derive(config.seed, 0xE0 + epoch);
      shuffle_indices(order, shuffle_rng);
      for (std::size_t b = 0; b < batches_per_epoch; ++b) {
        batch.clear();
        const std::size_t lo = b * config.batch_size;
        const std::size_t hi = std::min(n, lo + config.batch_size);
        for (std::size_t i = lo; i < hi; ++i) batch.push_back(samples[order[i]]);

        run_batch(batch, dropout_rng, win);
        ++win.batches;
        ++step;
        lr = linear_decay_lr(step, total_steps, config.base_lr);
        opt.step(lr);

        if (step % kLogEveryBatches == 0 && b + 1 != batches_per_epoch) {
          emit_records(log, config.scheme, win, step, lr, wall());
          win.reset();
        }
      }
      emit_records(log, config.scheme, win, step, lr, wall());
      win.reset();
      last_good = snapshot_params(layers);
    }
  } catch (const NnError&) {
    restore_params(layers, last_good);
    log.diverged = true;
  }
  return log;
}

const char* activation_name(Activation a) {
  return a == Activation::Relu ? "relu" : "identity";
}

// Serializes parameters as f32 and rounds the live values to match, so
// the saved artifact reproduces the model's predictions exactly.
void append_payload(std::string& buf, const std::vector<DenseLayer*>& layers) {
  for (auto* l : layers) {
    auto put = [&](std::vector<double>& v) {
      for (double& x : v) {
        const float f = static_cast<float>(x);
        buf.append(reinterpret_cast<const char*>(&f), sizeof(float));
        x = static_cast<double>(f);
      }
    };
    put(l->w);
    put(l->b);
  }
}

void read_payload(const std::string& buf, const std::vector<DenseLayer*>& layers) {
  std::size_t pos = 0;
  auto get = [&](std::vector<double>& v) {
    for (double& x : v) {
      if (pos + sizeof(float) > buf.size()) {
        throw DataError(DataError::Kind::Truncated,
                        "checkpoint payload truncated");
      }
      float f;
      std::memcpy(&f, buf.data() + pos, sizeof(float));
      pos += sizeof(float);
      x = static_cast<double>(f);
    }
  };
  for (auto* l : layers) {
    get(l->w);
    get(l->b);
  }
  if (pos != buf.size()) {
    throw DataError(DataError::Kind::Corrupt,
                    "checkpoint payload has trailing bytes");
  }
}

json spec_to_json(const PredictorSpec& spec) {
  return json{{"kind", predictor_kind_name(spec.kind)},
              {"d_f", spec.d_f},
              {"d_n", spec.d_n},
              {"hidden_dim", spec.hidden_dim},
              {"dropout_rate", spec.dropout_rate}};
}

PredictorSpec spec_from_json(const json& j) {
  PredictorSpec spec;
  spec.kind = predictor_kind_from_name(j.at("kind").get<std::string>());
  spec.d_f = j.at("d_f").get<int>();
  spec.d_n = j.at("d_n").get<int>();
  spec.hidden_dim = j.at("hidden_dim").get<int>();
  spec.dropout_rate = j.at("dropout_rate").get<double>();
  return spec;
}

}  // namespace

const char* scheme_name(TrainScheme s) {
  switch (s) {
    case TrainScheme::Standalone: return "standalone";
    case TrainScheme::MixtureConventional: return "mixture_conventional";
    case TrainScheme::MixtureDecoupled: return "mixture_decoupled";
  }
  return "?";
}

TrainScheme scheme_from_name(const std::string& name) {
  for (TrainScheme s : {TrainScheme::Standalone, TrainScheme::MixtureConventional,
                        TrainScheme::MixtureDecoupled}) {
    if (name == scheme_name(s)) return s;
  }
  throw DataError(DataError::Kind::Parse, "unknown train scheme: " + name);
}

void TrainConfig::validate(std::size_t train_size) const {
  auto fail = [](const std::string& msg) {
    throw DataError(DataError::Kind::Validation, "train config: " + msg);
  };
  if (batch_size <= 0) fail("batch_size must be positive");
  if (epochs < 0) fail("epochs must be >= 0");
  if (base_lr <= 0.0) fail("base_lr must be positive");
  if (weight_decay < 0.0) fail("weight_decay must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (tau <= 0.0) fail("tau must be positive");
  if (train_size == 0) fail("train split is empty");
  if (static_cast<std::size_t>(batch_size) > train_size) {
    fail("batch_size exceeds train size");
  }
}

void TrainLog::write_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw DataError(DataError::Kind::Io, "cannot write " + path);
  }
  out << "step,component,mse,kl,lr\n";
  char buf[160];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%zu,%s,%.12g,%.12g,%.12g\n", r.step,
                  r.component.c_str(), r.mse, r.kl, r.lr);
    out << buf;
  }
}

ComponentCurves component_curves(const TrainLog& log) {
  if (log.scheme == TrainScheme::Standalone) {
    throw DataError(DataError::Kind::Validation,
                    "component_curves requires a mixture-scheme log");
  }
  ComponentCurves curves;
  for (const auto& r : log.records) {
    if (r.component == "f") {
      curves.steps.push_back(r.step);
      curves.factors_mse.push_back(r.mse);
    } else if (r.component == "u") {
      curves.fusion_mse.push_back(r.mse);
    }
  }
  return curves;
}

TrainResult train(const PanelDataset& dataset, const PredictorSpec& spec,
                  const TrainConfig& config) {
  if (config.scheme != TrainScheme::Standalone) {
    throw DataError(DataError::Kind::Validation,
                    "train(spec) requires the standalone scheme");
  }
  auto samples = collect_samples(dataset, Split::Train);
  config.validate(samples.size());

  TrainResult result;
  Rng init_rng = Rng::derive(config.seed, 0xA0);
  PredictorSpec s = spec;
  s.dropout_rate = config.dropout;
  result.predictor = std::make_unique<Predictor>(s, init_rng);
  Predictor& model = *result.predictor;

  Optimizer opt(config.optimizer, model.layers(), config.weight_decay);
  result.log = run_training(
      std::move(samples), config, opt, model.layers(),
      [&](const std::vector<Sample>& batch, Rng& rng, LogWindow& win) {
        const double inv_n = 1.0 / static_cast<double>(batch.size());
        double loss = 0.0;
        for (const Sample& smp : batch) {
          Tape tape;
          const double pred =
              model.predict(smp.x_f, smp.x_n, NetMode::Train, &rng, &tape);
          const double resid = smp.target - pred;
          loss += resid * resid * inv_n;
          model.backward(tape, -2.0 * resid * inv_n);
        }
        if (!std::isfinite(loss)) throw NnError("non-finite training loss");
        win.sum_single += loss;
      });
  return result;
}

TrainResult train_mixture(const PanelDataset& dataset, int hidden_dim,
                          double dropout_rate, const TrainConfig& config) {
  if (config.scheme == TrainScheme::Standalone) {
    throw DataError(DataError::Kind::Validation,
                    "train_mixture requires a mixture scheme");
  }
  auto samples = collect_samples(dataset, Split::Train);
  config.validate(samples.size());

  TrainResult result;
  Rng init_rng = Rng::derive(config.seed, 0xA0);
  result.mixture = std::make_unique<MixtureModel>(
      static_cast<int>(dataset.d_f), static_cast<int>(dataset.d_n), hidden_dim,
      dropout_rate, config.tau, init_rng);
  MixtureModel& model = *result.mixture;

  Optimizer opt(config.optimizer, model.all_layers(), config.weight_decay);
  const bool decoupled = config.scheme == TrainScheme::MixtureDecoupled;
  result.log = run_training(
      std::move(samples), config, opt, model.all_layers(),
      [&](const std::vector<Sample>& batch, Rng& rng, LogWindow& win) {
        if (decoupled) {
          const auto res =
              model.decoupled_loss_step(batch, &rng, config.lambda_match);
          win.sum_f += res.mse_f;
          win.sum_u += res.mse_u;
          win.sum_kl += res.kl;
        } else {
          model.conventional_loss_step(batch, &rng);
          // Fig-4-style curves always track each component's own error.
          double mse_f = 0.0, mse_u = 0.0;
          const double inv_n = 1.0 / static_cast<double>(batch.size());
          for (const Sample& smp : batch) {
            const double g_f = model.factors_component().predict(
                smp.x_f, smp.x_n, NetMode::Eval);
            const double g_u = model.fusion_component().predict(
                smp.x_f, smp.x_n, NetMode::Eval);
            mse_f += (smp.target - g_f) * (smp.target - g_f) * inv_n;
            mse_u += (smp.target - g_u) * (smp.target - g_u) * inv_n;
          }
          win.sum_f += mse_f;
          win.sum_u += mse_u;
        }
      });
  return result;
}

namespace {

template <typename Model>
std::vector<double> evaluate_impl(const Model& model,
                                  const PanelDataset& dataset, Split split,
                                  kernels::Exec exec) {
  const auto idx = dataset.split_indices(split);
  std::vector<double> preds(idx.size());
  kernels::parallel_for(exec, idx.size(), [&](std::size_t k) {
    const Sample s = make_sample(dataset.instances[idx[k]]);
    preds[k] = model.predict(s.x_f, s.x_n, NetMode::Eval);
  });
  return preds;
}

}  // namespace

std::vector<double> evaluate(const Predictor& model,
                             const PanelDataset& dataset, Split split,
                             kernels::Exec exec) {
  return evaluate_impl(model, dataset, split, exec);
}

std::vector<double> evaluate(const MixtureModel& model,
                             const PanelDataset& dataset, Split split,
                             kernels::Exec exec) {
  return evaluate_impl(model, dataset, split, exec);
}

double mean_squared_error(std::span<const double> predictions,
                          const PanelDataset& dataset, Split split) {
  const auto idx = dataset.split_indices(split);
  if (predictions.size() != idx.size() || idx.empty()) {
    throw DataError(DataError::Kind::Validation,
                    "mean_squared_error: prediction/split size mismatch");
  }
  double mse = 0.0;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double r =
        static_cast<double>(dataset.instances[idx[k]].target_return);
    mse += (r - predictions[k]) * (r - predictions[k]);
  }
  return mse / static_cast<double>(idx.size());
}

std::pair<double, double> component_mse(const MixtureModel& model,
                                        const PanelDataset& dataset,
                                        Split split) {
  const auto preds_f = evaluate_impl(model.factors_component(), dataset, split,
                                     kernels::Exec::Parallel);
  const auto preds_u = evaluate_impl(model.fusion_component(), dataset, split,
                                     kernels::Exec::Parallel);
  return {mean_squared_error(preds_f, dataset, split),
          mean_squared_error(preds_u, dataset, split)};
}

void save_checkpoint(TrainResult& result, const std::string& manifest_path,
                     std::uint64_t seed, std::size_t step) {
  namespace fs = std::filesystem;
  json manifest;
  manifest["format"] = "mfn-checkpoint";
  manifest["version"] = 1;
  manifest["seed"] = seed;
  manifest["step"] = step;

  std::vector<DenseLayer*> layers_mut;
  if (result.predictor) {
    manifest["type"] = "predictor";
    manifest["spec"] = spec_to_json(result.predictor->spec());
    layers_mut = result.predictor->layers();
  } else if (result.mixture) {
    MixtureModel& m = *result.mixture;
    manifest["type"] = "mixture";
    manifest["spec"] = json{
        {"d_f", m.factors_component().spec().d_f},
        {"d_n", m.factors_component().spec().d_n},
        {"hidden_dim", m.factors_component().spec().hidden_dim},
        {"dropout_rate", m.factors_component().spec().dropout_rate},
        {"tau", m.tau()}};
    layers_mut = m.all_layers();
  } else {
    throw DataError(DataError::Kind::Validation, "empty TrainResult");
  }

  json layer_list = json::array();
  for (const auto* l : layers_mut) {
    layer_list.push_back(json{{"name", l->name},
                              {"in", l->in_dim},
                              {"out", l->out_dim},
                              {"activation", activation_name(l->act)},
                              {"bias", l->has_bias}});
  }
  manifest["layers"] = layer_list;

  const fs::path mpath(manifest_path);
  fs::path payload_path = mpath;
  payload_path.replace_extension(".bin");
  manifest["payload"] = payload_path.filename().string();

  std::string payload;
  append_payload(payload, layers_mut);
  std::ofstream pbin(payload_path, std::ios::binary | std::ios::trunc);
  if (!pbin ||
      !pbin.write(payload.data(), static_cast<std::streamsize>(payload.size()))) {
    throw DataError(DataError::Kind::Io,
                    "cannot write " + payload_path.string());
  }
  std::ofstream mout(mpath, std::ios::trunc);
  if (!mout) {
    throw DataError(DataError::Kind::Io, "cannot write " + manifest_path);
  }
  mout << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) {
    throw DataError(DataError::Kind::Io, "cannot open " + manifest_path);
  }
  json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw DataError(DataError::Kind::Parse,
                    std::string("bad checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "mfn-checkpoint") {
    throw DataError(DataError::Kind::BadMagic, "not a checkpoint manifest");
  }
  if (manifest.value("version", 0) != 1) {
    throw DataError(DataError::Kind::BadVersion,
                    "unsupported checkpoint version");
  }

  Checkpoint ckpt;
  ckpt.seed = manifest.value("seed", 0ull);
  ckpt.step = manifest.value("step", 0ull);

  Rng dummy(0);
  std::vector<DenseLayer*> layers;
  const std::string type = manifest.at("type").get<std::string>();
  if (type == "predictor") {
    ckpt.predictor =
        std::make_unique<Predictor>(spec_from_json(manifest.at("spec")), dummy);
    layers = ckpt.predictor->layers();
  } else if (type == "mixture") {
    const json& s = manifest.at("spec");
    ckpt.mixture = std::make_unique<MixtureModel>(
        s.at("d_f").get<int>(), s.at("d_n").get<int>(),
        s.at("hidden_dim").get<int>(), s.at("dropout_rate").get<double>(),
        s.at("tau").get<double>(), dummy);
    layers = ckpt.mixture->all_layers();
  } else {
    throw DataError(DataError::Kind::Parse, "unknown checkpoint type " + type);
  }

  const fs::path payload_path =
      fs::path(manifest_path).parent_path() /
      manifest.at("payload").get<std::string>();
  std::ifstream pbin(payload_path, std::ios::binary);
  if (!pbin) {
    throw DataError(DataError::Kind::Io,
                    "cannot open payload " + payload_path.string());
  }
  std::ostringstream ss;
  ss << pbin.rdbuf();
  read_payload(ss.str(), layers);
  return ckpt;
}

}  // namespace mfn
