#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mfn/kernels.hpp"

using namespace mfn::kernels;

TEST_CASE("parallel_for matches the serial reference bit for bit") {
  const std::size_t n = 10007;
  std::vector<double> serial(n), parallel(n);
  auto body = [](std::size_t i) {
    return std::sin(static_cast<double>(i)) * 1.0001 + std::sqrt(i + 1.0);
  };
  parallel_for(Exec::Serial, n, [&](std::size_t i) { serial[i] = body(i); });
  parallel_for(Exec::Parallel, n, [&](std::size_t i) { parallel[i] = body(i); });
  CHECK(serial == parallel);
}

TEST_CASE("parallel_for covers every index exactly once") {
  const std::size_t n = 4096;
  std::vector<int> hits(n, 0);
  parallel_for(Exec::Parallel, n, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
}

TEST_CASE("MomentAccumulator hand values") {
  MomentAccumulator acc;
  acc.add({1.0, 0.0});
  acc.add({-1.0, 0.0});
  CHECK(acc.count == 2);
  CHECK(acc.mean()[0] == doctest::Approx(0.0));
  CHECK(acc.mean()[1] == doctest::Approx(0.0));
  // Unbiased trace variance of {(1,0),(-1,0)} is 2.
  CHECK(acc.trace_variance() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(acc.mean_sq_norm() == doctest::Approx(1.0));
}

TEST_CASE("MomentAccumulator merge equals single-pass accumulation") {
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < 100; ++i) {
    xs.push_back({0.1 * i, 1.0 - 0.02 * i, std::cos(i * 0.3)});
  }
  MomentAccumulator whole;
  for (const auto& x : xs) whole.add(x);

  MomentAccumulator a, b, merged;
  for (std::size_t i = 0; i < xs.size(); ++i) (i < 37 ? a : b).add(xs[i]);
  merged.merge(a);
  merged.merge(b);

  CHECK(merged.count == whole.count);
  CHECK(merged.trace_variance() ==
        doctest::Approx(whole.trace_variance()).epsilon(1e-12));
  CHECK(merged.mean_sq_norm() ==
        doctest::Approx(whole.mean_sq_norm()).epsilon(1e-12));
}

TEST_CASE("trace variance degenerate cases") {
  MomentAccumulator acc;
  CHECK(acc.trace_variance() == 0.0);
  acc.add({3.0});
  CHECK(acc.trace_variance() == 0.0);  // n < 2
  acc.add({3.0});
  CHECK(acc.trace_variance() == doctest::Approx(0.0));
}
