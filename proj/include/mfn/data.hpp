#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfn {

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };

struct Instance {
  std::uint32_t stock_id = 0;
  std::int64_t timestamp = 0;  // epoch-day
  Split split = Split::Train;
  float target_return = 0.0f;  // fractional forward return
  std::vector<float> factors;
  std::vector<float> news_embedding;
};

struct DataError : std::runtime_error {
  enum class Kind {
    Io,
    BadMagic,
    BadVersion,
    Truncated,
    Corrupt,
    NonFinite,
    Duplicate,
    Parse,
    Validation,
  };
  DataError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
  Kind kind;
};

// Time-indexed panel of (stock, timestamp) instances. Instances are kept
// sorted by (timestamp, stock_id); construction and loading validate the
// invariants below.
struct PanelDataset {
  std::uint32_t d_f = 0;
  std::uint32_t d_n = 0;
  std::uint32_t horizon_months = 1;
  std::vector<Instance> instances;

  // Sorts and checks dimensions, finiteness, duplicates, and that the
  // train/val/test partitions are contiguous in time. Throws DataError.
  void normalize_and_validate();

  std::size_t split_size(Split s) const;
  std::vector<std::size_t> split_indices(Split s) const;
};

// One rebalance unit: all stocks sharing a timestamp.
struct CrossSection {
  std::int64_t timestamp = 0;
  std::vector<std::uint32_t> stock_ids;
  std::vector<double> predicted;
  std::vector<double> realized;

  std::size_t size() const { return stock_ids.size(); }
};

struct FactorStats {
  std::vector<double> mean;
  std::vector<double> stddev;  // population convention
};

const char* split_name(Split s);
Split split_from_name(const std::string& name);

// MFNR binary format; bit-exact round trip. A trailing 64-bit FNV-1a
// checksum over all preceding bytes detects payload corruption.
void save_dataset(const PanelDataset& dataset, const std::string& path);

// Loads MFNR or CSV, detected by magic bytes. Throws DataError with a
// distinct kind per failure mode.
PanelDataset load_dataset(const std::string& path);

// Re-tags splits: train iff t <= train_end, val iff train_end < t <= val_end,
// test otherwise. Errors on empty train or test partition.
PanelDataset split_by_time(const PanelDataset& dataset, std::int64_t train_end,
                           std::int64_t val_end);

enum class StandardizeMode { Off, ZScore };

// Z-scores factor columns with train-split statistics (population std),
// applied to all splits. Columns with sigma < 1e-12 are zeroed.
std::pair<PanelDataset, FactorStats> standardize_factors(
    const PanelDataset& dataset, StandardizeMode mode);

// Partitions one prediction per instance of the chosen split into
// time-ordered cross-sections.
std::vector<CrossSection> group_by_timestamp(std::span<const double> predictions,
                                             const PanelDataset& dataset,
                                             Split split);

}  // namespace mfn
