#include "mfn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

namespace mfn {

namespace {

struct EvalError : DataError {
  explicit EvalError(const std::string& msg)
      : DataError(DataError::Kind::Validation, msg) {}
};

// Average ranks with tie handling (1-based).
std::vector<double> average_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n, 0.0);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double ca = a[i] - ma, cb = b[i] - mb;
    cov += ca * cb;
    va += ca * ca;
    vb += cb * cb;
  }
  if (va <= 0.0 || vb <= 0.0) {
    throw EvalError("zero variance in correlation input");
  }
  return cov / std::sqrt(va * vb);
}

std::array<double, 10> section_decile_means(const CrossSection& section) {
  const auto labels = decile_assign(section);
  std::array<double, 10> sums{};
  std::array<std::size_t, 10> counts{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    sums[labels[i]] += section.realized[i];
    counts[labels[i]] += 1;
  }
  std::array<double, 10> means{};
  for (int d = 0; d < 10; ++d) {
    means[d] = sums[d] / static_cast<double>(counts[d]);
  }
  return means;
}

}  // namespace

double mape(std::span<const double> preds, std::span<const double> actuals,
            double eps) {
  if (preds.size() != actuals.size() || preds.empty()) {
    throw EvalError("mape: length mismatch or empty input");
  }
  if (eps <= 0.0) throw EvalError("mape: eps must be positive");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    sum += std::abs(actuals[i] - preds[i]) / std::max(std::abs(actuals[i]), eps);
  }
  return sum / static_cast<double>(preds.size());
}

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw EvalError("spearman needs two samples of equal size >= 2");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  return pearson(ra, rb);
}

IcResult information_coefficient(const std::vector<CrossSection>& sections,
                                 bool pooled, kernels::Exec exec) {
  if (sections.empty()) throw EvalError("information_coefficient: no sections");
  if (pooled) {
    std::vector<double> preds, actuals;
    for (const auto& cs : sections) {
      preds.insert(preds.end(), cs.predicted.begin(), cs.predicted.end());
      actuals.insert(actuals.end(), cs.realized.begin(), cs.realized.end());
    }
    return {spearman(preds, actuals), 0};
  }
  for (const auto& cs : sections) {
    if (cs.size() < 2) throw EvalError("cross-section size must be >= 2");
  }
  // Per-section results computed in parallel, reduced in section order.
  std::vector<double> per_section(sections.size());
  std::vector<char> ok(sections.size(), 0);
  kernels::parallel_for(exec, sections.size(), [&](std::size_t i) {
    const auto& cs = sections[i];
    try {
      per_section[i] = spearman(cs.predicted, cs.realized);
      ok[i] = 1;
    } catch (const EvalError&) {
      ok[i] = 0;  // zero-variance section: skipped and tallied
    }
  });
  IcResult res;
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < sections.size(); ++i) {
    if (ok[i]) {
      sum += per_section[i];
      ++used;
    } else {
      ++res.skipped;
    }
  }
  if (used == 0) throw EvalError("all cross-sections degenerate");
  res.ic = sum / static_cast<double>(used);
  return res;
}

std::vector<int> decile_assign(const CrossSection& section) {
  const std::size_t n = section.size();
  if (n < 10) {
    throw EvalError("decile_assign requires section size >= 10, got " +
                    std::to_string(n));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (section.predicted[a] != section.predicted[b]) {
      return section.predicted[a] < section.predicted[b];
    }
    return section.stock_ids[a] < section.stock_ids[b];
  });
  std::vector<int> labels(n, 0);
  for (std::size_t k = 0; k < n; ++k) {
    labels[order[k]] = static_cast<int>((10 * k) / n);
  }
  return labels;
}

std::array<double, 10> decile_returns(const std::vector<CrossSection>& sections,
                                      kernels::Exec exec) {
  if (sections.empty()) throw EvalError("decile_returns: no sections");
  for (const auto& cs : sections) {
    if (cs.size() < 10) throw EvalError("decile_returns: section size < 10");
  }
  std::vector<std::array<double, 10>> per_section(sections.size());
  kernels::parallel_for(exec, sections.size(), [&](std::size_t i) {
    per_section[i] = section_decile_means(sections[i]);
  });
  std::array<double, 10> out{};
  for (const auto& m : per_section) {
    for (int d = 0; d < 10; ++d) out[d] += m[d];
  }
  for (int d = 0; d < 10; ++d) {
    out[d] /= static_cast<double>(sections.size());
  }
  return out;
}

std::vector<double> portfolio_series(const std::vector<CrossSection>& sections,
                                     PortfolioMode mode, kernels::Exec exec) {
  if (sections.empty()) throw EvalError("portfolio_series: no sections");
  for (const auto& cs : sections) {
    if (cs.size() < 10) throw EvalError("portfolio_series: section size < 10");
  }
  std::vector<double> series(sections.size());
  kernels::parallel_for(exec, sections.size(), [&](std::size_t i) {
    const auto means = section_decile_means(sections[i]);
    series[i] = mode == PortfolioMode::LongOnly ? means[9] : means[9] - means[0];
  });
  return series;
}

double annualized_return(std::span<const double> monthly) {
  if (monthly.empty()) throw EvalError("annualized_return: empty series");
  double wealth = 1.0;
  for (double r : monthly) {
    if (r <= -1.0) throw EvalError("annualized_return: return <= -100%");
    wealth *= 1.0 + r;
  }
  return std::pow(wealth, 12.0 / static_cast<double>(monthly.size())) - 1.0;
}

double sharpe_ratio(std::span<const double> monthly) {
  if (monthly.size() < 2) throw EvalError("sharpe_ratio needs >= 2 months");
  const double n = static_cast<double>(monthly.size());
  double mean = 0.0;
  for (double r : monthly) mean += r;
  mean /= n;
  double sq = 0.0;
  for (double r : monthly) sq += (r - mean) * (r - mean);
  const double sd = std::sqrt(sq / (n - 1.0));
  if (sd <= 0.0) throw EvalError("sharpe_ratio: zero volatility");
  return mean / sd * std::sqrt(12.0);
}

std::vector<double> cumulative_curve(std::span<const double> monthly) {
  std::vector<double> out;
  out.reserve(monthly.size());
  double wealth = 1.0;
  for (double r : monthly) {
    if (r <= -1.0) throw EvalError("cumulative_curve: return <= -100%");
    wealth *= 1.0 + r;
    out.push_back(wealth - 1.0);
  }
  return out;
}

BacktestReport full_report(std::span<const double> predictions,
                           const PanelDataset& dataset, Split split,
                           const ReportOptions& options) {
  const auto sections = group_by_timestamp(predictions, dataset, split);
  BacktestReport rep;
  for (const auto& cs : sections) rep.timestamps.push_back(cs.timestamp);
  rep.long_only = portfolio_series(sections, PortfolioMode::LongOnly,
                                   options.exec);
  rep.long_short = portfolio_series(sections, PortfolioMode::LongShort,
                                    options.exec);
  rep.long_only_cum = cumulative_curve(rep.long_only);
  rep.long_short_cum = cumulative_curve(rep.long_short);
  rep.decile_returns = decile_returns(sections, options.exec);
  rep.long_only_annualized = annualized_return(rep.long_only);
  rep.long_short_annualized = annualized_return(rep.long_short);
  rep.long_only_sharpe = sharpe_ratio(rep.long_only);
  rep.long_short_sharpe = sharpe_ratio(rep.long_short);

  std::vector<double> actuals;
  for (const auto& cs : sections) {
    actuals.insert(actuals.end(), cs.realized.begin(), cs.realized.end());
  }
  std::vector<double> preds_flat;
  for (const auto& cs : sections) {
    preds_flat.insert(preds_flat.end(), cs.predicted.begin(),
                      cs.predicted.end());
  }
  rep.mape = mape(preds_flat, actuals, options.mape_eps);
  const auto ic = information_coefficient(sections, options.ic_pooled,
                                          options.exec);
  rep.ic = ic.ic;
  rep.ic_skipped_sections = ic.skipped;
  return rep;
}

std::string BacktestReport::to_json() const {
  nlohmann::ordered_json j;
  j["months"] = timestamps.size();
  j["long_only"] = {{"annualized_return", long_only_annualized},
                    {"sharpe", long_only_sharpe},
                    {"monthly", long_only}};
  j["long_short"] = {{"annualized_return", long_short_annualized},
                     {"sharpe", long_short_sharpe},
                     {"monthly", long_short}};
  j["deciles"] = decile_returns;
  j["mape"] = mape;
  j["ic"] = ic;
  j["ic_skipped_sections"] = ic_skipped_sections;
  return j.dump(2);
}

void BacktestReport::write_files(const std::string& out_dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(out_dir) / name, std::ios::trunc);
    if (!out) {
      throw DataError(DataError::Kind::Io, "cannot write " + name);
    }
    return out;
  };
  {
    auto out = open("report.json");
    out << to_json() << "\n";
  }
  char buf[128];
  {
    auto out = open("monthly.csv");
    out << "timestamp,long_only,long_short\n";
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g\n",
                    static_cast<long long>(timestamps[i]), long_only[i],
                    long_short[i]);
      out << buf;
    }
  }
  {
    auto out = open("deciles.csv");
    out << "decile,mean_return\n";
    for (int d = 0; d < 10; ++d) {
      std::snprintf(buf, sizeof(buf), "%d,%.12g\n", d, decile_returns[d]);
      out << buf;
    }
  }
  {
    auto out = open("cumulative.csv");
    out << "timestamp,long_only_cum,long_short_cum\n";
    for (std::size_t i = 0; i < timestamps.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%lld,%.12g,%.12g\n",
                    static_cast<long long>(timestamps[i]), long_only_cum[i],
                    long_short_cum[i]);
      out << buf;
    }
  }
}

}  // namespace mfn
