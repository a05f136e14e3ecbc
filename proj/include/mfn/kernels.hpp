#pragma once

#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mfn::kernels {

enum class Exec { Serial, Parallel };

// Instance-level data parallelism. The serial path is the reference the
// parallel path is tested against; results are bit-identical because each
// index writes its own slot.
template <typename F>
void parallel_for(Exec mode, std::size_t n, F&& fn) {
  if (mode == Exec::Serial) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    fn(static_cast<std::size_t>(i));
  }
#else
  for (std::size_t i = 0; i < n; ++i) fn(i);
#endif
}

// Streaming first/second-moment accumulator for trace-variance estimates.
// Merging is associative on the stored sums, so per-chunk accumulators can
// be combined in fixed chunk order for thread-count-independent results.
struct MomentAccumulator {
  std::size_t count = 0;
  std::vector<double> sum;         // per-coordinate sum
  double sum_sq_norm = 0.0;        // sum of ||x||^2

  void add(const std::vector<double>& x) {
    if (sum.empty()) sum.assign(x.size(), 0.0);
    for (std::size_t j = 0; j < x.size(); ++j) {
      sum[j] += x[j];
      sum_sq_norm += x[j] * x[j];
    }
    ++count;
  }

  void merge(const MomentAccumulator& other) {
    if (other.count == 0) return;
    if (sum.empty()) sum.assign(other.sum.size(), 0.0);
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += other.sum[j];
    sum_sq_norm += other.sum_sq_norm;
    count += other.count;
  }

  std::vector<double> mean() const {
    std::vector<double> m(sum.size(), 0.0);
    if (count == 0) return m;
    for (std::size_t j = 0; j < sum.size(); ++j) {
      m[j] = sum[j] / static_cast<double>(count);
    }
    return m;
  }

  // E[||x||^2] estimate.
  double mean_sq_norm() const {
    return count == 0 ? 0.0 : sum_sq_norm / static_cast<double>(count);
  }

  // Unbiased trace variance: sum_j Var(x_j) with divide-by-(N-1).
  double trace_variance() const {
    if (count < 2) return 0.0;
    const double n = static_cast<double>(count);
    double centered = sum_sq_norm;
    for (double sj : sum) centered -= sj * sj / n;
    return centered / (n - 1.0);
  }
};

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace mfn::kernels
