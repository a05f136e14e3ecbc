#include "mfn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace mfn {

namespace {

constexpr char kMagic[4] = {'M', 'F', 'N', 'R'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

std::uint64_t fnv1a(const char* data, std::size_t n,
                    std::uint64_t h = kFnvOffset) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= kFnvPrime;
  }
  return h;
}

struct ByteWriter {
  std::string buf;
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const char* p = reinterpret_cast<const char*>(&v);
    buf.append(p, sizeof(T));
  }
};

struct ByteReader {
  const char* data;
  std::size_t size;
  std::size_t pos = 0;

  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    if (pos + sizeof(T) > size) {
      throw DataError(DataError::Kind::Truncated,
                      "truncated MFNR payload at byte " + std::to_string(pos));
    }
    T v;
    std::memcpy(&v, data + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
};

bool finite(float v) { return std::isfinite(v); }

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError(DataError::Kind::Io, "cannot open file: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PanelDataset load_mfnr(const std::string& content, const std::string& path) {
  if (content.size() < 4 || std::memcmp(content.data(), kMagic, 4) != 0) {
    throw DataError(DataError::Kind::BadMagic, "bad magic bytes in " + path);
  }
  constexpr std::size_t kHeaderSize = 4 + 4 + 8 + 4 + 4 + 4;
  if (content.size() < kHeaderSize + sizeof(std::uint64_t)) {
    throw DataError(DataError::Kind::Truncated, "file too short: " + path);
  }
  // Size check from the header before the checksum, so a chopped file
  // reports truncation rather than corruption.
  {
    ByteReader hdr{content.data(), content.size(), 8};
    const auto n = hdr.get<std::uint64_t>();
    const auto d_f = hdr.get<std::uint32_t>();
    const auto d_n = hdr.get<std::uint32_t>();
    hdr.get<std::uint32_t>();  // horizon
    const std::size_t per_instance =
        4 + 8 + 1 + 4 + 4 * (static_cast<std::size_t>(d_f) + d_n);
    if (n > content.size() / per_instance ||
        content.size() <
            kHeaderSize + n * per_instance + sizeof(std::uint64_t)) {
      throw DataError(DataError::Kind::Truncated,
                      "truncated MFNR file: " + path);
    }
  }
  // Trailing checksum covers everything before it.
  const std::size_t body_size = content.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, content.data() + body_size, sizeof(stored));
  if (fnv1a(content.data(), body_size) != stored) {
    throw DataError(DataError::Kind::Corrupt,
                    "checksum mismatch (corrupt file): " + path);
  }

  ByteReader r{content.data(), body_size, 4};
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion) {
    throw DataError(DataError::Kind::BadVersion,
                    "unsupported MFNR version " + std::to_string(version));
  }
  const auto n = r.get<std::uint64_t>();
  PanelDataset ds;
  ds.d_f = r.get<std::uint32_t>();
  ds.d_n = r.get<std::uint32_t>();
  ds.horizon_months = r.get<std::uint32_t>();
  ds.instances.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    Instance& inst = ds.instances[i];
    inst.stock_id = r.get<std::uint32_t>();
    inst.timestamp = r.get<std::int64_t>();
    const auto tag = r.get<std::uint8_t>();
    if (tag > 2) {
      throw DataError(DataError::Kind::Parse,
                      "invalid split tag " + std::to_string(tag));
    }
    inst.split = static_cast<Split>(tag);
    inst.target_return = r.get<float>();
    inst.factors.resize(ds.d_f);
    for (auto& v : inst.factors) v = r.get<float>();
    inst.news_embedding.resize(ds.d_n);
    for (auto& v : inst.news_embedding) v = r.get<float>();
  }
  if (r.pos != body_size) {
    throw DataError(DataError::Kind::Corrupt,
                    "trailing bytes after payload in " + path);
  }
  ds.normalize_and_validate();
  return ds;
}

PanelDataset load_csv(const std::string& content, const std::string& path) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError(DataError::Kind::Parse, "empty CSV: " + path);
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();

  std::vector<std::string> header;
  {
    std::istringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) header.push_back(tok);
  }
  const std::vector<std::string> fixed = {"stock_id", "timestamp", "split",
                                          "target"};
  if (header.size() < 5 ||
      !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    throw DataError(DataError::Kind::Parse,
                    "CSV header must start with stock_id,timestamp,split,target");
  }
  std::size_t d_f = 0;
  std::size_t col = 4;
  while (col < header.size() && header[col] == "f" + std::to_string(d_f)) {
    ++d_f;
    ++col;
  }
  std::size_t d_n = 0;
  while (col < header.size() && header[col] == "n" + std::to_string(d_n)) {
    ++d_n;
    ++col;
  }
  if (col != header.size() || d_f == 0 || d_n == 0) {
    throw DataError(DataError::Kind::Parse,
                    "CSV header feature columns must be f0..f{k},n0..n{m}");
  }

  PanelDataset ds;
  ds.d_f = static_cast<std::uint32_t>(d_f);
  ds.d_n = static_cast<std::uint32_t>(d_n);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    std::vector<std::string> cells;
    while (std::getline(ls, tok, ',')) cells.push_back(tok);
    if (cells.size() != header.size()) {
      throw DataError(DataError::Kind::Parse,
                      "CSV row " + std::to_string(lineno) + " has " +
                          std::to_string(cells.size()) + " cells, expected " +
                          std::to_string(header.size()));
    }
    Instance inst;
    try {
      inst.stock_id = static_cast<std::uint32_t>(std::stoul(cells[0]));
      inst.timestamp = std::stoll(cells[1]);
      inst.split = split_from_name(cells[2]);
      inst.target_return = std::stof(cells[3]);
      inst.factors.reserve(d_f);
      for (std::size_t j = 0; j < d_f; ++j) {
        inst.factors.push_back(std::stof(cells[4 + j]));
      }
      inst.news_embedding.reserve(d_n);
      for (std::size_t j = 0; j < d_n; ++j) {
        inst.news_embedding.push_back(std::stof(cells[4 + d_f + j]));
      }
    } catch (const DataError&) {
      throw;
    } catch (const std::exception& e) {
      throw DataError(DataError::Kind::Parse, "CSV row " +
                                                  std::to_string(lineno) +
                                                  ": " + e.what());
    }
    ds.instances.push_back(std::move(inst));
  }
  ds.normalize_and_validate();
  return ds;
}

}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw DataError(DataError::Kind::Parse, "unknown split tag: " + name);
}

void PanelDataset::normalize_and_validate() {
  std::stable_sort(instances.begin(), instances.end(),
                   [](const Instance& a, const Instance& b) {
                     if (a.timestamp != b.timestamp)
                       return a.timestamp < b.timestamp;
                     return a.stock_id < b.stock_id;
                   });
  std::int64_t max_ts[3] = {INT64_MIN, INT64_MIN, INT64_MIN};
  std::int64_t min_ts[3] = {INT64_MAX, INT64_MAX, INT64_MAX};
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Instance& inst = instances[i];
    if (inst.factors.size() != d_f || inst.news_embedding.size() != d_n) {
      throw DataError(DataError::Kind::Validation,
                      "instance " + std::to_string(i) +
                          " has wrong feature dimensions");
    }
    if (!finite(inst.target_return) ||
        !std::all_of(inst.factors.begin(), inst.factors.end(), finite) ||
        !std::all_of(inst.news_embedding.begin(), inst.news_embedding.end(),
                     finite)) {
      throw DataError(DataError::Kind::NonFinite,
                      "non-finite value in instance " + std::to_string(i));
    }
    if (i > 0 && instances[i - 1].timestamp == inst.timestamp &&
        instances[i - 1].stock_id == inst.stock_id) {
      throw DataError(DataError::Kind::Duplicate,
                      "duplicate (stock " + std::to_string(inst.stock_id) +
                          ", timestamp " + std::to_string(inst.timestamp) +
                          ")");
    }
    const int s = static_cast<int>(inst.split);
    max_ts[s] = std::max(max_ts[s], inst.timestamp);
    min_ts[s] = std::min(min_ts[s], inst.timestamp);
  }
  // Split boundaries must be contiguous in time.
  auto check = [&](int earlier, int later) {
    if (max_ts[earlier] != INT64_MIN && min_ts[later] != INT64_MAX &&
        max_ts[earlier] > min_ts[later]) {
      throw DataError(DataError::Kind::Validation,
                      std::string(split_name(static_cast<Split>(later))) +
                          " timestamps precede " +
                          split_name(static_cast<Split>(earlier)));
    }
  };
  check(0, 1);
  check(1, 2);
  check(0, 2);
}

std::size_t PanelDataset::split_size(Split s) const {
  std::size_t n = 0;
  for (const auto& inst : instances) n += (inst.split == s);
  return n;
}

std::vector<std::size_t> PanelDataset::split_indices(Split s) const {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (instances[i].split == s) idx.push_back(i);
  }
  return idx;
}

void save_dataset(const PanelDataset& dataset, const std::string& path) {
  ByteWriter w;
  w.buf.append(kMagic, 4);
  w.put(kVersion);
  w.put(static_cast<std::uint64_t>(dataset.instances.size()));
  w.put(dataset.d_f);
  w.put(dataset.d_n);
  w.put(dataset.horizon_months);
  for (const Instance& inst : dataset.instances) {
    w.put(inst.stock_id);
    w.put(inst.timestamp);
    w.put(static_cast<std::uint8_t>(inst.split));
    w.put(inst.target_return);
    for (float v : inst.factors) w.put(v);
    for (float v : inst.news_embedding) w.put(v);
  }
  w.put(fnv1a(w.buf.data(), w.buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !out.write(w.buf.data(),
                         static_cast<std::streamsize>(w.buf.size()))) {
    throw DataError(DataError::Kind::Io, "cannot write file: " + path);
  }
}

PanelDataset load_dataset(const std::string& path) {
  const std::string content = read_file(path);
  if (content.size() >= 4 && std::memcmp(content.data(), kMagic, 4) == 0) {
    return load_mfnr(content, path);
  }
  // CSV files start with the fixed header prefix; anything else is a bad
  // magic for the binary format.
  if (content.rfind("stock_id,", 0) == 0) {
    return load_csv(content, path);
  }
  throw DataError(DataError::Kind::BadMagic,
                  "unrecognized file format (bad magic): " + path);
}

PanelDataset split_by_time(const PanelDataset& dataset, std::int64_t train_end,
                           std::int64_t val_end) {
  if (train_end >= val_end) {
    throw DataError(DataError::Kind::Validation,
                    "split_by_time requires train_end < val_end");
  }
  PanelDataset out = dataset;
  std::size_t n_train = 0, n_test = 0;
  for (Instance& inst : out.instances) {
    if (inst.timestamp <= train_end) {
      inst.split = Split::Train;
      ++n_train;
    } else if (inst.timestamp <= val_end) {
      inst.split = Split::Val;
    } else {
      inst.split = Split::Test;
      ++n_test;
    }
  }
  if (n_train == 0) {
    throw DataError(DataError::Kind::Validation, "empty train partition");
  }
  if (n_test == 0) {
    throw DataError(DataError::Kind::Validation, "empty test partition");
  }
  return out;
}

std::pair<PanelDataset, FactorStats> standardize_factors(
    const PanelDataset& dataset, StandardizeMode mode) {
  FactorStats stats;
  stats.mean.assign(dataset.d_f, 0.0);
  stats.stddev.assign(dataset.d_f, 1.0);
  if (mode == StandardizeMode::Off) {
    return {dataset, stats};
  }
  const auto train_idx = dataset.split_indices(Split::Train);
  if (train_idx.size() < 2) {
    throw DataError(DataError::Kind::Validation,
                    "zscore standardization needs >= 2 train instances");
  }
  const double n = static_cast<double>(train_idx.size());
  for (std::uint32_t j = 0; j < dataset.d_f; ++j) {
    double sum = 0.0;
    for (std::size_t i : train_idx) sum += dataset.instances[i].factors[j];
    const double mu = sum / n;
    double sq = 0.0;
    for (std::size_t i : train_idx) {
      const double c = dataset.instances[i].factors[j] - mu;
      sq += c * c;
    }
    stats.mean[j] = mu;
    stats.stddev[j] = std::sqrt(sq / n);  // population convention
  }
  PanelDataset out = dataset;
  for (Instance& inst : out.instances) {
    for (std::uint32_t j = 0; j < out.d_f; ++j) {
      if (stats.stddev[j] < 1e-12) {
        inst.factors[j] = 0.0f;
      } else {
        inst.factors[j] = static_cast<float>(
            (inst.factors[j] - stats.mean[j]) / stats.stddev[j]);
      }
    }
  }
  return {out, stats};
}

std::vector<CrossSection> group_by_timestamp(std::span<const double> predictions,
                                             const PanelDataset& dataset,
                                             Split split) {
  const auto idx = dataset.split_indices(split);
  if (predictions.size() != idx.size()) {
    throw DataError(DataError::Kind::Validation,
                    "prediction count " + std::to_string(predictions.size()) +
                        " != split size " + std::to_string(idx.size()));
  }
  std::vector<CrossSection> sections;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Instance& inst = dataset.instances[idx[k]];
    if (sections.empty() || sections.back().timestamp != inst.timestamp) {
      sections.push_back(CrossSection{inst.timestamp, {}, {}, {}});
    }
    CrossSection& cs = sections.back();
    cs.stock_ids.push_back(inst.stock_id);
    cs.predicted.push_back(predictions[k]);
    cs.realized.push_back(static_cast<double>(inst.target_return));
  }
  return sections;
}

}  // namespace mfn
