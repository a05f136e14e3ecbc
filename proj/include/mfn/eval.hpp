#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "mfn/data.hpp"
#include "mfn/kernels.hpp"

namespace mfn {

enum class PortfolioMode { LongOnly, LongShort };

struct BacktestReport {
  std::vector<std::int64_t> timestamps;
  std::vector<double> long_only;         // monthly returns
  std::vector<double> long_short;        // monthly returns
  std::vector<double> long_only_cum;     // wealth-minus-one path
  std::vector<double> long_short_cum;
  std::array<double, 10> decile_returns{};
  double long_only_annualized = 0.0;
  double long_short_annualized = 0.0;
  double long_only_sharpe = 0.0;
  double long_short_sharpe = 0.0;
  double mape = 0.0;
  double ic = 0.0;
  std::size_t ic_skipped_sections = 0;

  std::string to_json() const;
  void write_files(const std::string& out_dir) const;
};

// Mean of |r - pred| / max(|r|, eps).
double mape(std::span<const double> preds, std::span<const double> actuals,
            double eps = 1e-4);

struct IcResult {
  double ic = 0.0;
  std::size_t skipped = 0;  // zero-variance sections
};

// Per-date Spearman rank correlation (average ranks on ties), averaged
// arithmetically across cross-sections. With pooled=true the correlation
// is computed once over all instances instead.
IcResult information_coefficient(const std::vector<CrossSection>& sections,
                                 bool pooled = false,
                                 kernels::Exec exec = kernels::Exec::Parallel);

// Spearman rank correlation of two parallel samples.
double spearman(std::span<const double> a, std::span<const double> b);

// Decile label per stock: rank k of n (ascending predicted return, ties
// broken by ascending stock_id) gets floor(10k/n).
std::vector<int> decile_assign(const CrossSection& section);

// Per-decile mean realized return, averaged across sections.
std::array<double, 10> decile_returns(const std::vector<CrossSection>& sections,
                                      kernels::Exec exec = kernels::Exec::Parallel);

std::vector<double> portfolio_series(const std::vector<CrossSection>& sections,
                                     PortfolioMode mode,
                                     kernels::Exec exec = kernels::Exec::Parallel);

// Geometric: (prod(1+r))^(12/M) - 1.
double annualized_return(std::span<const double> monthly);

// (mean / sample std) * sqrt(12), zero risk-free rate.
double sharpe_ratio(std::span<const double> monthly);

// Compounded wealth-minus-one path.
std::vector<double> cumulative_curve(std::span<const double> monthly);

struct ReportOptions {
  bool ic_pooled = false;
  double mape_eps = 1e-4;
  kernels::Exec exec = kernels::Exec::Parallel;
};

BacktestReport full_report(std::span<const double> predictions,
                           const PanelDataset& dataset, Split split = Split::Test,
                           const ReportOptions& options = {});

}  // namespace mfn
