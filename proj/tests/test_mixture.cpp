#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mfn/mixture.hpp"
#include "mfn/nn.hpp"
#include "mfn/rng.hpp"

using namespace mfn;

namespace {

constexpr int kDf = 3;
constexpr int kDn = 4;

Sample random_sample(Rng& rng) {
  Sample s;
  s.x_f.resize(kDf);
  s.x_n.resize(kDn);
  for (auto& v : s.x_f) v = rng.normal();
  for (auto& v : s.x_n) v = rng.normal();
  s.target = rng.normal(0.0, 0.1);
  return s;
}

MixtureModel make_model(std::uint64_t seed, double tau = 0.01) {
  Rng rng(seed);
  return MixtureModel(kDf, kDn, 8, 0.0, tau, rng);
}

std::vector<double> component_grads(const MixtureModel& m) {
  MixtureModel& mm = const_cast<MixtureModel&>(m);
  auto g = mm.factors_component().flat_grads();
  const auto gu = mm.fusion_component().flat_grads();
  g.insert(g.end(), gu.begin(), gu.end());
  return g;
}

}  // namespace

TEST_CASE("target_distribution oracle values") {
  SUBCASE("equal errors give the uniform target") {
    const auto [q_f, q_u] = target_distribution(0.5, 0.4, 0.6, 0.01);
    CHECK(q_f == doctest::Approx(0.5));
    CHECK(q_u == doctest::Approx(0.5));
  }
  SUBCASE("squared errors (0, 0.01) at tau 0.01 give softmax(0, -1)") {
    const auto [q_f, q_u] = target_distribution(0.0, 0.0, 0.1, 0.01);
    CHECK(q_f == doctest::Approx(0.731059).epsilon(1e-5));
    CHECK(q_u == doctest::Approx(0.268941).epsilon(1e-5));
  }
  SUBCASE("temperature limits") {
    const auto hot = target_distribution(0.0, 0.3, -0.2, 1e9);
    CHECK(hot.first == doctest::Approx(0.5).epsilon(1e-6));
    const auto cold = target_distribution(0.0, 0.01, 0.5, 1e-9);
    CHECK(cold.first == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("equals the uniform-prior Gaussian posterior with variance tau/2") {
    const double r = 0.07, y_f = 0.02, y_u = -0.01, tau = 0.013;
    const auto [q_f, q_u] = target_distribution(r, y_f, y_u, tau);
    const double lf = std::exp(-(r - y_f) * (r - y_f) / tau);
    const double lu = std::exp(-(r - y_u) * (r - y_u) / tau);
    CHECK(q_f == doctest::Approx(lf / (lf + lu)).epsilon(1e-15));
    CHECK(q_u == doctest::Approx(lu / (lf + lu)).epsilon(1e-15));
  }
  CHECK_THROWS_AS(target_distribution(0.0, 0.0, 0.0, 0.0), NnError);
}

TEST_CASE("gate probabilities") {
  auto m = make_model(1);
  Rng rng(2);
  const auto s = random_sample(rng);

  SUBCASE("zero gate parameters give (0.5, 0.5)") {
    m.gate().set_zero_params();
    const auto [p_f, p_u] = m.gate_probs(s.x_f, s.x_n);
    CHECK(p_f == doctest::Approx(0.5));
    CHECK(p_u == doctest::Approx(0.5));
  }

  SUBCASE("probabilities sum to one and shift-invariance holds") {
    const auto [p_f, p_u] = m.gate_probs(s.x_f, s.x_n);
    CHECK(p_f + p_u == doctest::Approx(1.0).epsilon(1e-12));
    m.gate().b[0] += 2.5;
    m.gate().b[1] += 2.5;
    const auto [q_f, q_u] = m.gate_probs(s.x_f, s.x_n);
    CHECK(q_f == doctest::Approx(p_f).epsilon(1e-12));
  }
}

TEST_CASE("mixture prediction is the gated convex combination") {
  auto m = make_model(3);
  Rng rng(4);
  const auto s = random_sample(rng);
  const double g_f = m.factors_component().predict(s.x_f, s.x_n, NetMode::Eval);
  const double g_u = m.fusion_component().predict(s.x_f, s.x_n, NetMode::Eval);
  const auto [p_f, p_u] = m.gate_probs(s.x_f, s.x_n);
  const double y = m.predict(s.x_f, s.x_n, NetMode::Eval);
  CHECK(y == doctest::Approx(p_f * g_f + p_u * g_u).epsilon(1e-12));
  CHECK(y >= std::min(g_f, g_u) - 1e-12);
  CHECK(y <= std::max(g_f, g_u) + 1e-12);

  SUBCASE("uniform gate averages the components") {
    m.gate().set_zero_params();
    CHECK(m.predict(s.x_f, s.x_n, NetMode::Eval) ==
          doctest::Approx(0.5 * (g_f + g_u)).epsilon(1e-12));
  }
}

TEST_CASE("perfect fit gives zero loss and zero gradients") {
  auto m = make_model(5);
  for (DenseLayer* l : m.all_layers()) l->set_zero_params();
  Rng rng(6);
  std::vector<Sample> batch;
  for (int i = 0; i < 4; ++i) {
    auto s = random_sample(rng);
    s.target = 0.0;  // both zeroed components predict 0 exactly
    batch.push_back(s);
  }
  const double loss = m.conventional_loss_step(batch, nullptr);
  CHECK(loss == 0.0);
  for (double g : component_grads(m)) CHECK(g == 0.0);
  for (double g : m.gate().gw) CHECK(g == 0.0);
}

TEST_CASE("conventional gradients match finite differences") {
  auto m = make_model(7);
  Rng rng(8);
  std::vector<Sample> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_sample(rng));

  auto loss = [&] {
    double l = 0.0;
    for (const auto& s : batch) {
      const double y = m.predict(s.x_f, s.x_n, NetMode::Eval);
      l += (s.target - y) * (s.target - y) / batch.size();
    }
    return l;
  };

  m.zero_grad();
  m.conventional_loss_step(batch, nullptr);

  const double eps = 1e-4;
  for (DenseLayer* l : m.all_layers()) {
    std::size_t gi = 0;
    auto check = [&](std::vector<double>& p, const std::vector<double>& g) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + eps;
        const double lp = loss();
        p[i] = orig - eps;
        const double lm = loss();
        p[i] = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
        CHECK(std::abs(fd - g[i]) / scale < 1e-4);
        ++gi;
      }
    };
    check(l->w, l->gw);
    check(l->b, l->gb);
    (void)gi;
  }
}

TEST_CASE("decoupled component gradients match their own-residual losses") {
  auto m = make_model(9);
  Rng rng(10);
  std::vector<Sample> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_sample(rng));

  // FD oracle: the independent term only; the detached KL target must not
  // contribute to component gradients.
  auto independent_loss = [&] {
    double l = 0.0;
    for (const auto& s : batch) {
      const double g_f =
          m.factors_component().predict(s.x_f, s.x_n, NetMode::Eval);
      const double g_u =
          m.fusion_component().predict(s.x_f, s.x_n, NetMode::Eval);
      l += ((s.target - g_f) * (s.target - g_f) +
            (s.target - g_u) * (s.target - g_u)) /
           batch.size();
    }
    return l;
  };

  m.zero_grad();
  const auto res = m.decoupled_loss_step(batch, nullptr);
  CHECK(res.total() == doctest::Approx(independent_loss()).epsilon(1e-12));

  const double eps = 1e-4;
  for (Predictor* comp : {&m.factors_component(), &m.fusion_component()}) {
    for (DenseLayer* l : comp->layers()) {
      auto check = [&](std::vector<double>& p, const std::vector<double>& g) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double orig = p[i];
          p[i] = orig + eps;
          const double lp = independent_loss();
          p[i] = orig - eps;
          const double lm = independent_loss();
          p[i] = orig;
          const double fd = (lp - lm) / (2.0 * eps);
          const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
          CHECK(std::abs(fd - g[i]) / scale < 1e-4);
        }
      };
      check(l->w, l->gw);
      check(l->b, l->gb);
    }
  }
}

TEST_CASE("decoupled gate gradient matches the KL finite difference") {
  auto m = make_model(11);
  Rng rng(12);
  std::vector<Sample> batch;
  for (int i = 0; i < 3; ++i) batch.push_back(random_sample(rng));

  auto kl_loss = [&] {
    double l = 0.0;
    for (const auto& s : batch) {
      const double g_f =
          m.factors_component().predict(s.x_f, s.x_n, NetMode::Eval);
      const double g_u =
          m.fusion_component().predict(s.x_f, s.x_n, NetMode::Eval);
      const auto [q_f, q_u] = target_distribution(s.target, g_f, g_u, m.tau());
      const auto [p_f, p_u] = m.gate_probs(s.x_f, s.x_n);
      l += kl_discrete(std::vector<double>{p_f, p_u},
                       std::vector<double>{q_f, q_u}) /
           batch.size();
    }
    return l;
  };

  m.zero_grad();
  const double lambda = 0.7;
  const auto res = m.decoupled_loss_step(batch, nullptr, lambda);
  CHECK(res.kl == doctest::Approx(kl_loss()).epsilon(1e-12));

  const double eps = 1e-5;
  DenseLayer& gate = m.gate();
  auto check = [&](std::vector<double>& p, const std::vector<double>& g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double lp = kl_loss();
      p[i] = orig - eps;
      const double lm = kl_loss();
      p[i] = orig;
      const double fd = lambda * (lp - lm) / (2.0 * eps);
      const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-6});
      CHECK(std::abs(fd - g[i]) / scale < 1e-3);
    }
  };
  check(gate.w, gate.gw);
  check(gate.b, gate.gb);
}

TEST_CASE("component gradients are invariant to gate perturbations") {
  auto m = make_model(13);
  Rng rng(14);
  std::vector<Sample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_sample(rng));

  m.zero_grad();
  m.decoupled_loss_step(batch, nullptr);
  const auto before = component_grads(m);

  for (auto& v : m.gate().w) v += 0.37;
  m.zero_grad();
  m.decoupled_loss_step(batch, nullptr);
  CHECK(component_grads(m) == before);
}

TEST_CASE("conventional and decoupled objectives differ with a biased gate") {
  auto m = make_model(15);
  m.gate().b[0] = 1.0;  // non-uniform gate
  Rng rng(16);
  std::vector<Sample> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_sample(rng));

  m.zero_grad();
  m.conventional_loss_step(batch, nullptr);
  const auto conv = component_grads(m);
  m.zero_grad();
  m.decoupled_loss_step(batch, nullptr);
  const auto dec = component_grads(m);
  double diff = 0.0;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    diff = std::max(diff, std::abs(conv[i] - dec[i]));
  }
  CHECK(diff > 1e-8);
}

TEST_CASE("gate-only training drives the gate to a near-one-hot target") {
  auto m = make_model(17, /*tau=*/1e-4);
  // Factors component predicts 0 exactly; fusion is off by 0.1.
  for (DenseLayer* l : m.all_layers()) l->set_zero_params();
  m.fusion_component().layers().back()->b[0] = 0.1;

  Rng rng(18);
  std::vector<Sample> batch;
  for (int i = 0; i < 8; ++i) {
    auto s = random_sample(rng);
    s.target = 0.0;
    batch.push_back(s);
  }
  Optimizer gate_opt(OptimizerKind::Adam, {&m.gate()}, 0.0);
  for (int step = 0; step < 3000; ++step) {
    m.zero_grad();
    m.decoupled_loss_step(batch, nullptr);
    gate_opt.step(0.01);
  }
  const auto [p_f, p_u] = m.gate_probs(batch[0].x_f, batch[0].x_n);
  CHECK(p_f > 0.99);
  CHECK(p_u < 0.01);
}

TEST_CASE("gate_error_alignment endpoints") {
  PanelDataset ds;
  ds.d_f = kDf;
  ds.d_n = kDn;
  for (int i = 0; i < 2; ++i) {
    Instance inst;
    inst.stock_id = static_cast<std::uint32_t>(i);
    inst.timestamp = 10;
    inst.split = Split::Train;
    // Stock 0: target 0 (factors exact). Stock 1: target 0.1 (fusion exact).
    inst.target_return = i == 0 ? 0.0f : 0.1f;
    inst.factors.assign(kDf, 0.0f);
    inst.factors[0] = i == 0 ? 1.0f : -1.0f;
    inst.news_embedding.assign(kDn, 0.0f);
    ds.instances.push_back(inst);
  }
  ds.normalize_and_validate();

  auto m = make_model(19);
  for (DenseLayer* l : m.all_layers()) l->set_zero_params();
  m.fusion_component().layers().back()->b[0] = 0.1;

  SUBCASE("uniform gate never exceeds 0.5, alignment is 0") {
    CHECK(m.gate_error_alignment(ds, Split::Train) == 0.0);
  }

  SUBCASE("oracle gate aligned with the lower-error component gives 1") {
    // Gate logit_f = 10 * x_f[0]: stock 0 -> p_f ~ 1, stock 1 -> p_u ~ 1.
    m.gate().w[0] = 10.0;
    CHECK(m.gate_error_alignment(ds, Split::Train) == 1.0);
  }

  SUBCASE("anti-aligned gate gives 0") {
    m.gate().w[0] = -10.0;
    CHECK(m.gate_error_alignment(ds, Split::Train) == 0.0);
  }

  CHECK_THROWS_AS(m.gate_error_alignment(ds, Split::Test), DataError);
}
