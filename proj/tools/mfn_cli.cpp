// Command-line entry point: synth / train / backtest / varlab / report.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mfn/data.hpp"
#include "mfn/eval.hpp"
#include "mfn/synth.hpp"
#include "mfn/train.hpp"
#include "mfn/varlab.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void reject_unknown_keys(const json& j, const std::string& where,
                         std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) {
      if (key == a) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw UsageError("unknown config key: " + where + "." + key);
    }
  }
}

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw UsageError("invalid JSON in " + path + ": " + e.what());
  }
  reject_unknown_keys(j, "", {"seed", "synth", "split", "data", "model",
                              "train", "eval", "varlab"});
  if (!j.contains("seed")) throw UsageError("config: seed is mandatory");
  return j;
}

std::uint64_t effective_seed(const json& config,
                             const std::optional<std::uint64_t>& override_seed) {
  return override_seed.value_or(config.at("seed").get<std::uint64_t>());
}

mfn::SynthConfig parse_synth(const json& config, std::uint64_t seed) {
  mfn::SynthConfig c = mfn::SynthConfig::default_config(seed);
  if (!config.contains("synth")) return c;
  const json& s = config.at("synth");
  reject_unknown_keys(
      s, "synth",
      {"n_stocks", "n_months", "d_f", "d_n", "factor_signal_dim",
       "news_signal_dim", "noise_std_factors", "noise_std_news",
       "noise_std_return", "regime_schedule", "beta_news"});
  c.n_stocks = s.value("n_stocks", c.n_stocks);
  c.n_months = s.value("n_months", c.n_months);
  c.d_f = s.value("d_f", c.d_f);
  c.d_n = s.value("d_n", c.d_n);
  c.factor_signal_dim = s.value("factor_signal_dim", c.factor_signal_dim);
  c.news_signal_dim = s.value("news_signal_dim", c.news_signal_dim);
  c.noise_std_factors = s.value("noise_std_factors", c.noise_std_factors);
  c.noise_std_news = s.value("noise_std_news", c.noise_std_news);
  c.noise_std_return = s.value("noise_std_return", c.noise_std_return);
  c.beta_news = s.value("beta_news", c.beta_news);
  if (s.contains("regime_schedule")) {
    c.regime_schedule.clear();
    for (const auto& r : s.at("regime_schedule")) {
      c.regime_schedule.push_back(
          mfn::regime_from_name(r.get<std::string>()));
    }
    if (static_cast<int>(c.regime_schedule.size()) != c.n_months) {
      throw UsageError("config synth.regime_schedule length " +
                       std::to_string(c.regime_schedule.size()) +
                       " != n_months " + std::to_string(c.n_months));
    }
  } else {
    // Default alternating 3-month blocks for any n_months.
    c.regime_schedule.resize(c.n_months);
    for (int m = 0; m < c.n_months; ++m) {
      c.regime_schedule[m] = ((m / 3) % 2 == 0) ? mfn::Regime::FactorsOnly
                                                : mfn::Regime::Both;
    }
  }
  return c;
}

mfn::TrainConfig parse_train(const json& config, std::uint64_t seed) {
  mfn::TrainConfig c;
  c.seed = seed;
  if (!config.contains("train")) return c;
  const json& t = config.at("train");
  reject_unknown_keys(t, "train",
                      {"scheme", "batch_size", "epochs", "base_lr",
                       "weight_decay", "dropout", "optimizer", "tau",
                       "lambda_match"});
  if (t.contains("scheme")) {
    c.scheme = mfn::scheme_from_name(t.at("scheme").get<std::string>());
  }
  c.batch_size = t.value("batch_size", c.batch_size);
  c.epochs = t.value("epochs", c.epochs);
  c.base_lr = t.value("base_lr", c.base_lr);
  c.weight_decay = t.value("weight_decay", c.weight_decay);
  c.dropout = t.value("dropout", c.dropout);
  if (t.contains("optimizer")) {
    const auto name = t.at("optimizer").get<std::string>();
    if (name == "adam") {
      c.optimizer = mfn::OptimizerKind::Adam;
    } else if (name == "sgd") {
      c.optimizer = mfn::OptimizerKind::Sgd;
    } else {
      throw UsageError("config train.optimizer must be adam or sgd");
    }
  }
  c.tau = t.value("tau", c.tau);
  c.lambda_match = t.value("lambda_match", c.lambda_match);
  return c;
}

mfn::ReportOptions parse_eval(const json& config) {
  mfn::ReportOptions opt;
  if (!config.contains("eval")) return opt;
  const json& e = config.at("eval");
  reject_unknown_keys(e, "eval", {"ic_pooled", "mape_epsilon"});
  opt.ic_pooled = e.value("ic_pooled", false);
  opt.mape_eps = e.value("mape_epsilon", 1e-4);
  return opt;
}

mfn::PanelDataset apply_data_options(const json& config,
                                     mfn::PanelDataset dataset) {
  if (config.contains("split")) {
    const json& s = config.at("split");
    reject_unknown_keys(s, "split", {"train_end", "val_end"});
    dataset = mfn::split_by_time(dataset, s.at("train_end").get<std::int64_t>(),
                                 s.at("val_end").get<std::int64_t>());
  }
  if (config.contains("data")) {
    const json& d = config.at("data");
    reject_unknown_keys(d, "data", {"standardize"});
    const auto mode = d.value("standardize", std::string("off"));
    if (mode == "zscore") {
      dataset = mfn::standardize_factors(dataset, mfn::StandardizeMode::ZScore)
                    .first;
    } else if (mode != "off") {
      throw UsageError("config data.standardize must be off or zscore");
    }
  }
  return dataset;
}

void echo_config(const std::string& config_path, const std::string& out_dir) {
  std::ifstream in(config_path);
  std::ofstream out(fs::path(out_dir) / "config.json", std::ios::trunc);
  out << in.rdbuf();
}

int cmd_synth(const std::string& config_path, const std::string& out_path,
              const std::string& latents_path,
              std::optional<std::uint64_t> seed_override) {
  const json config = load_config(config_path);
  const std::uint64_t seed = effective_seed(config, seed_override);
  const mfn::SynthConfig synth_config = parse_synth(config, seed);

  auto result = mfn::generate(synth_config);
  if (config.contains("split")) {
    const json& s = config.at("split");
    reject_unknown_keys(s, "split", {"train_end", "val_end"});
    result.dataset = mfn::split_by_time(
        result.dataset, s.at("train_end").get<std::int64_t>(),
        s.at("val_end").get<std::int64_t>());
  }
  mfn::save_dataset(result.dataset, out_path);

  if (!latents_path.empty()) {
    json sidecar;
    sidecar["seed"] = synth_config.seed;
    sidecar["n_instances"] = result.dataset.instances.size();
    json regimes = json::array(), oracle = json::array();
    json s_f = json::array(), s_n = json::array();
    for (std::size_t i = 0; i < result.dataset.instances.size(); ++i) {
      regimes.push_back(mfn::regime_name(result.latents.regime[i]));
      oracle.push_back(
          mfn::oracle_predict(synth_config, result.latents, i));
      s_f.push_back(result.latents.s_f[i]);
      s_n.push_back(result.latents.s_n[i]);
    }
    sidecar["regime"] = std::move(regimes);
    sidecar["oracle"] = std::move(oracle);
    sidecar["s_f"] = std::move(s_f);
    sidecar["s_n"] = std::move(s_n);
    std::ofstream out(latents_path, std::ios::trunc);
    if (!out) throw mfn::DataError(mfn::DataError::Kind::Io,
                                   "cannot write " + latents_path);
    out << sidecar.dump() << "\n";
  }

  int n_factors_only = 0;
  for (auto r : synth_config.regime_schedule) {
    n_factors_only += r == mfn::Regime::FactorsOnly;
  }
  std::cout << "synth: " << result.dataset.instances.size() << " instances, d_f="
            << result.dataset.d_f << ", d_n=" << result.dataset.d_n << ", "
            << synth_config.n_months << " months (" << n_factors_only
            << " FACTORS_ONLY), seed=" << seed << "\n"
            << "wrote " << out_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir,
              std::optional<std::uint64_t> seed_override) {
  const json config = load_config(config_path);
  const std::uint64_t seed = effective_seed(config, seed_override);
  mfn::PanelDataset dataset =
      apply_data_options(config, mfn::load_dataset(data_path));

  mfn::TrainConfig train_config = parse_train(config, seed);

  int hidden_dim = 64;
  mfn::PredictorKind kind = mfn::PredictorKind::FactorsAlone;
  if (config.contains("model")) {
    const json& m = config.at("model");
    reject_unknown_keys(m, "model", {"kind", "hidden_dim"});
    hidden_dim = m.value("hidden_dim", hidden_dim);
    if (m.contains("kind")) {
      kind = mfn::predictor_kind_from_name(m.at("kind").get<std::string>());
    }
  }

  fs::create_directories(out_dir);
  echo_config(config_path, out_dir);

  mfn::TrainResult result;
  if (train_config.scheme == mfn::TrainScheme::Standalone) {
    mfn::PredictorSpec spec{kind, static_cast<int>(dataset.d_f),
                            static_cast<int>(dataset.d_n), hidden_dim,
                            train_config.dropout};
    result = mfn::train(dataset, spec, train_config);
  } else {
    result = mfn::train_mixture(dataset, hidden_dim, train_config.dropout,
                                train_config);
  }

  const std::string ckpt = (fs::path(out_dir) / "checkpoint.json").string();
  const std::size_t steps =
      result.log.records.empty() ? 0 : result.log.records.back().step;
  mfn::save_checkpoint(result, ckpt, seed, steps);
  result.log.write_csv((fs::path(out_dir) / "curves.csv").string());

  if (result.predictor) {
    const auto preds = mfn::evaluate(*result.predictor, dataset,
                                     mfn::Split::Train);
    std::cout << "final train MSE: "
              << mfn::mean_squared_error(preds, dataset, mfn::Split::Train)
              << "\n";
  } else {
    const auto [mse_f, mse_u] =
        mfn::component_mse(*result.mixture, dataset, mfn::Split::Train);
    std::cout << "final train MSE: factors=" << mse_f << " fusion=" << mse_u
              << "\n";
  }
  if (result.log.diverged) {
    std::cout << "warning: training diverged; checkpoint holds the last good "
                 "parameters\n";
  }
  std::cout << "wrote " << ckpt << "\n";
  return 0;
}

void check_dims(std::uint32_t ckpt_df, std::uint32_t ckpt_dn,
                const mfn::PanelDataset& dataset) {
  if (ckpt_df != dataset.d_f || ckpt_dn != dataset.d_n) {
    throw mfn::DataError(
        mfn::DataError::Kind::Validation,
        "checkpoint dims (d_f=" + std::to_string(ckpt_df) + ", d_n=" +
            std::to_string(ckpt_dn) + ") do not match dataset (d_f=" +
            std::to_string(dataset.d_f) + ", d_n=" +
            std::to_string(dataset.d_n) + ")");
  }
}

int cmd_backtest(const std::string& ckpt_path, const std::string& data_path,
                 const std::string& out_dir, const std::string& config_path) {
  mfn::ReportOptions options;
  if (!config_path.empty()) options = parse_eval(load_config(config_path));

  const mfn::PanelDataset dataset = mfn::load_dataset(data_path);
  auto ckpt = mfn::load_checkpoint(ckpt_path);
  std::vector<double> preds;
  if (ckpt.predictor) {
    check_dims(static_cast<std::uint32_t>(ckpt.predictor->spec().d_f),
               static_cast<std::uint32_t>(ckpt.predictor->spec().d_n), dataset);
    preds = mfn::evaluate(*ckpt.predictor, dataset, mfn::Split::Test);
  } else {
    check_dims(
        static_cast<std::uint32_t>(ckpt.mixture->factors_component().spec().d_f),
        static_cast<std::uint32_t>(ckpt.mixture->factors_component().spec().d_n),
        dataset);
    preds = mfn::evaluate(*ckpt.mixture, dataset, mfn::Split::Test);
  }
  const auto report = mfn::full_report(preds, dataset, mfn::Split::Test,
                                       options);
  report.write_files(out_dir);
  std::cout << "backtest: " << report.timestamps.size()
            << " months, long-only ann. return " << report.long_only_annualized
            << ", Sharpe " << report.long_only_sharpe << ", IC " << report.ic
            << "\n"
            << "wrote " << out_dir << "/report.json\n";
  return 0;
}

int cmd_report(const std::string& preds_path, const std::string& data_path,
               const std::string& out_dir, const std::string& config_path) {
  mfn::ReportOptions options;
  if (!config_path.empty()) options = parse_eval(load_config(config_path));

  const mfn::PanelDataset dataset = mfn::load_dataset(data_path);
  std::ifstream in(preds_path);
  if (!in) throw UsageError("cannot open predictions: " + preds_path);
  std::string line;
  if (!std::getline(in, line)) {
    throw UsageError("predictions CSV is empty");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "prediction") {
    throw UsageError("predictions CSV must have a single `prediction` column");
  }
  std::vector<double> preds;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    preds.push_back(std::stod(line));
  }
  const auto report = mfn::full_report(preds, dataset, mfn::Split::Test,
                                       options);
  report.write_files(out_dir);
  std::cout << "wrote " << out_dir << "/report.json\n";
  return 0;
}

int cmd_varlab(const std::string& config_path, const std::string& out_path,
               const std::string& ckpt_path, const std::string& data_path,
               std::optional<std::uint64_t> seed_override) {
  const json config = load_config(config_path);
  const std::uint64_t seed = effective_seed(config, seed_override);

  mfn::IdentitySpec spec;
  spec.seed = seed;
  std::size_t n = 1000000;
  if (config.contains("varlab")) {
    const json& v = config.at("varlab");
    reject_unknown_keys(
        v, "varlab",
        {"p_low", "p_high", "zeta_dim", "zeta_mean", "zeta_std", "n",
         "probe_instances"});
    spec.p_low = v.value("p_low", spec.p_low);
    spec.p_high = v.value("p_high", spec.p_high);
    spec.zeta_dim = v.value("zeta_dim", spec.zeta_dim);
    spec.zeta_mean = v.value("zeta_mean", spec.zeta_mean);
    spec.zeta_std = v.value("zeta_std", spec.zeta_std);
    n = v.value("n", n);
  }
  const auto identity = mfn::verify_identity(spec, n);

  json out = json::parse(identity.to_json());
  if (!ckpt_path.empty()) {
    if (data_path.empty()) {
      throw UsageError("varlab --checkpoint also requires --data");
    }
    auto ckpt = mfn::load_checkpoint(ckpt_path);
    if (!ckpt.mixture) {
      throw UsageError("varlab probe requires a mixture checkpoint");
    }
    const mfn::PanelDataset dataset = mfn::load_dataset(data_path);
    std::size_t probe_n = 0;
    if (config.contains("varlab")) {
      probe_n = config.at("varlab").value("probe_instances", 0);
    }
    const auto probe = mfn::training_entanglement_probe(
        *ckpt.mixture, dataset, mfn::Split::Train, probe_n);
    out["training_probe"] = json::parse(probe.to_json());
  }
  std::ofstream os(out_path, std::ios::trunc);
  if (!os) {
    throw mfn::DataError(mfn::DataError::Kind::Io, "cannot write " + out_path);
  }
  os << out.dump(2) << "\n";
  std::cout << "identity: closed form " << identity.closed_form
            << ", empirical " << identity.empirical << ", gap "
            << identity.relative_gap << "\nwrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal factor/news return prediction toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_path, latents_path, ckpt_path,
      preds_path;
  std::optional<std::uint64_t> seed;

  auto* synth = app.add_subcommand("synth", "generate a synthetic panel");
  synth->add_option("--config", config_path, "JSON config")->required();
  synth->add_option("--out", out_path, "output MFNR file")->required();
  synth->add_option("--latents", latents_path, "latents sidecar JSON");
  synth->add_option("--seed", seed, "seed override");

  auto* train = app.add_subcommand("train", "train a predictor or mixture");
  train->add_option("--config", config_path, "JSON config")->required();
  train->add_option("--data", data_path, "dataset (MFNR or CSV)")->required();
  train->add_option("--out", out_path, "output directory")->required();
  train->add_option("--seed", seed, "seed override");

  auto* backtest = app.add_subcommand("backtest", "backtest a checkpoint");
  backtest->add_option("--checkpoint", ckpt_path, "checkpoint manifest")
      ->required();
  backtest->add_option("--data", data_path, "dataset")->required();
  backtest->add_option("--out", out_path, "output directory")->required();
  backtest->add_option("--config", config_path, "JSON config (eval options)");

  auto* report = app.add_subcommand("report", "report from a predictions CSV");
  report->add_option("--preds", preds_path, "predictions CSV")->required();
  report->add_option("--data", data_path, "dataset")->required();
  report->add_option("--out", out_path, "output directory")->required();
  report->add_option("--config", config_path, "JSON config (eval options)");

  auto* varlab = app.add_subcommand("varlab", "gradient variance reports");
  varlab->add_option("--config", config_path, "JSON config")->required();
  varlab->add_option("--out", out_path, "output JSON path")->required();
  varlab->add_option("--checkpoint", ckpt_path, "mixture checkpoint (probe)");
  varlab->add_option("--data", data_path, "dataset (probe)");
  varlab->add_option("--seed", seed, "seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(config_path, out_path, latents_path, seed);
    }
    if (train->parsed()) {
      return cmd_train(config_path, data_path, out_path, seed);
    }
    if (backtest->parsed()) {
      return cmd_backtest(ckpt_path, data_path, out_path, config_path);
    }
    if (report->parsed()) {
      return cmd_report(preds_path, data_path, out_path, config_path);
    }
    if (varlab->parsed()) {
      return cmd_varlab(config_path, out_path, ckpt_path, data_path, seed);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mfn::DataError& e) {
    const bool usage = e.kind == mfn::DataError::Kind::Validation ||
                       e.kind == mfn::DataError::Kind::Parse;
    std::cerr << "error: " << e.what() << "\n";
    return usage ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
