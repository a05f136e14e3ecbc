#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mfn/predictors.hpp"
#include "mfn/rng.hpp"

using namespace mfn;

namespace {

std::vector<double> random_vec(Rng& rng, int n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// Max relative error between analytic parameter gradients of the squared
// error loss and central finite differences.
double max_grad_gap(Predictor& model, const std::vector<double>& x_f,
                    const std::vector<double>& x_n, double target) {
  auto loss = [&] {
    const double y = model.predict(x_f, x_n, NetMode::Eval);
    return (target - y) * (target - y);
  };
  model.zero_grad();
  Tape tape;
  const double y = model.predict(x_f, x_n, NetMode::Train, nullptr, &tape);
  model.backward(tape, -2.0 * (target - y));
  const auto analytic = model.flat_grads();

  const double eps = 1e-4;
  double worst = 0.0;
  std::size_t k = 0;
  for (DenseLayer* l : model.layers()) {
    for (std::vector<double>* p : {&l->w, &l->b}) {
      for (double& v : *p) {
        const double orig = v;
        v = orig + eps;
        const double lp = loss();
        v = orig - eps;
        const double lm = loss();
        v = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double a = analytic[k++];
        const double scale = std::max({std::abs(fd), std::abs(a), 1e-6});
        worst = std::max(worst, std::abs(fd - a) / scale);
      }
    }
  }
  REQUIRE(k == analytic.size());
  return worst;
}

}  // namespace

TEST_CASE("parameter counts per architecture") {
  Rng rng(1);
  SUBCASE("FACTORS_ALONE with a skip projection (d_f 20, hidden 32)") {
    Predictor p({PredictorKind::FactorsAlone, 20, 8, 32, 0.0}, rng);
    CHECK(p.param_count() == 2401);
  }
  SUBCASE("FACTORS_ALONE without projection (d_f == hidden)") {
    Predictor p({PredictorKind::FactorsAlone, 16, 8, 16, 0.0}, rng);
    CHECK(p.param_count() == (16 * 16 + 16) * 2 + 16 + 1);
  }
  SUBCASE("NEWS_ALONE is one linear map") {
    Predictor p({PredictorKind::NewsAlone, 4, 32, 16, 0.0}, rng);
    CHECK(p.param_count() == 33);
  }
  SUBCASE("FUSION_COMBINATION bottleneck is ceil(d_n/2)") {
    Predictor p({PredictorKind::FusionCombination, 3, 7, 8, 0.0}, rng);
    // bottleneck 7->4, fusion (3+4)->8, out 8->1
    CHECK(p.param_count() == (7 * 4 + 4) + (7 * 8 + 8) + (8 + 1));
  }
}

TEST_CASE("zeroed parameters give zero output for any input") {
  Rng rng(2);
  for (PredictorKind kind :
       {PredictorKind::FactorsAlone, PredictorKind::NewsAlone,
        PredictorKind::Finin, PredictorKind::FusionCombination,
        PredictorKind::FusionSummation, PredictorKind::FusionAttention}) {
    Predictor p({kind, 4, 6, 8, 0.0}, rng);
    for (DenseLayer* l : p.layers()) l->set_zero_params();
    const auto x_f = random_vec(rng, 4);
    const auto x_n = random_vec(rng, 6);
    CHECK(p.predict(x_f, x_n, NetMode::Eval) == 0.0);
  }
}

TEST_CASE("modality invariances") {
  Rng rng(3);
  const auto x_f = random_vec(rng, 4);
  const auto x_n = random_vec(rng, 6);
  auto x_f2 = x_f;
  x_f2[1] += 5.0;
  auto x_n2 = x_n;
  x_n2[3] -= 7.0;

  Predictor news({PredictorKind::NewsAlone, 4, 6, 8, 0.0}, rng);
  CHECK(news.predict(x_f, x_n, NetMode::Eval) ==
        news.predict(x_f2, x_n, NetMode::Eval));

  Predictor factors({PredictorKind::FactorsAlone, 4, 6, 8, 0.0}, rng);
  CHECK(factors.predict(x_f, x_n, NetMode::Eval) ==
        factors.predict(x_f, x_n2, NetMode::Eval));
}

TEST_CASE("summation head with identity projections is w dot (x_f + x_n)") {
  Rng rng(4);
  const int d = 3;
  Predictor p({PredictorKind::FusionSummation, d, d, d, 0.0}, rng);
  auto layers = p.layers();
  // proj_f = proj_n = identity; relu is transparent on positive sums.
  for (int li : {0, 1}) {
    layers[li]->set_zero_params();
    for (int i = 0; i < d; ++i) layers[li]->w[i * d + i] = 1.0;
  }
  layers[2]->w = {0.5, -1.0, 2.0};
  layers[2]->b = {0.25};
  const std::vector<double> x_f{1.0, 2.0, 3.0};
  const std::vector<double> x_n{0.5, 0.5, 0.5};
  double expect = 0.25;
  for (int i = 0; i < d; ++i) {
    expect += layers[2]->w[i] * (x_f[i] + x_n[i]);
  }
  CHECK(p.predict(x_f, x_n, NetMode::Eval) == doctest::Approx(expect));
}

TEST_CASE("attention weights behave like a softmax") {
  Rng rng(5);
  Predictor p({PredictorKind::FusionAttention, 4, 6, 8, 0.0}, rng);
  auto layers = p.layers();
  const auto x_f = random_vec(rng, 4);
  const auto x_n = random_vec(rng, 6);

  SUBCASE("weights sum to one") {
    const auto [a_f, a_n] = p.attention_weights(x_f, x_n);
    CHECK(a_f >= 0.0);
    CHECK(a_n >= 0.0);
    CHECK(a_f + a_n == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("zero logits give equal weights and the mean of projections") {
    layers[2]->set_zero_params();
    const auto [a_f, a_n] = p.attention_weights(x_f, x_n);
    CHECK(a_f == doctest::Approx(0.5));
    CHECK(a_n == doctest::Approx(0.5));
    // y = out(0.5 pf + 0.5 pn)
    const auto pf = layers[0]->forward(x_f, nullptr);
    const auto pn = layers[1]->forward(x_n, nullptr);
    std::vector<double> z(pf.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = 0.5 * (pf[i] + pn[i]);
    CHECK(p.predict(x_f, x_n, NetMode::Eval) ==
          doctest::Approx(layers[3]->forward(z, nullptr)[0]).epsilon(1e-12));
  }

  SUBCASE("weights are invariant to a shared logit offset") {
    const auto [a_f, a_n] = p.attention_weights(x_f, x_n);
    layers[2]->b[0] += 3.25;
    layers[2]->b[1] += 3.25;
    const auto [b_f, b_n] = p.attention_weights(x_f, x_n);
    CHECK(b_f == doctest::Approx(a_f).epsilon(1e-12));
    CHECK(b_n == doctest::Approx(a_n).epsilon(1e-12));
  }

  SUBCASE("wrong kind throws") {
    Predictor q({PredictorKind::NewsAlone, 4, 6, 8, 0.0}, rng);
    CHECK_THROWS_AS(q.attention_weights(x_f, x_n), NnError);
  }
}

TEST_CASE("combination head equals the independently composed layers") {
  Rng rng(6);
  Predictor p({PredictorKind::FusionCombination, 5, 8, 16, 0.0}, rng);
  const auto x_f = random_vec(rng, 5);
  const auto x_n = random_vec(rng, 8);
  auto layers = p.layers();
  const auto bn = layers[0]->forward(x_n, nullptr);
  const auto cat = concat(x_f, bn);
  const auto u = layers[1]->forward(cat, nullptr);
  const double expect = layers[2]->forward(u, nullptr)[0];
  CHECK(p.predict(x_f, x_n, NetMode::Eval) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("finin forward matches the scaled dot-product formula") {
  Rng rng(7);
  const int h = 4;
  Predictor p({PredictorKind::Finin, 3, 5, h, 0.0}, rng);
  const auto x_f = random_vec(rng, 3);
  const auto x_n = random_vec(rng, 5);
  auto layers = p.layers();
  const auto pf = layers[0]->forward(x_f, nullptr);
  const auto pn = layers[1]->forward(x_n, nullptr);
  double wgt = 0.0;
  for (int i = 0; i < h; ++i) wgt += pf[i] * pn[i];
  wgt /= std::sqrt(static_cast<double>(h));
  std::vector<double> z(h);
  for (int i = 0; i < h; ++i) z[i] = pf[i] + wgt * pn[i];
  CHECK(p.predict(x_f, x_n, NetMode::Eval) ==
        doctest::Approx(layers[2]->forward(z, nullptr)[0]).epsilon(1e-12));
}

TEST_CASE("gradients match finite differences for every kind") {
  Rng rng(8);
  for (PredictorKind kind :
       {PredictorKind::FactorsAlone, PredictorKind::NewsAlone,
        PredictorKind::Finin, PredictorKind::FusionCombination,
        PredictorKind::FusionSummation, PredictorKind::FusionAttention}) {
    CAPTURE(predictor_kind_name(kind));
    for (int trial = 0; trial < 3; ++trial) {
      Predictor p({kind, 5, 8, 16, 0.0}, rng);
      const auto x_f = random_vec(rng, 5);
      const auto x_n = random_vec(rng, 8);
      CHECK(max_grad_gap(p, x_f, x_n, rng.normal(0.0, 0.1)) < 1e-4);
    }
  }
}

TEST_CASE("input gradients match finite differences") {
  Rng rng(9);
  for (PredictorKind kind :
       {PredictorKind::Finin, PredictorKind::FusionAttention,
        PredictorKind::FusionCombination}) {
    CAPTURE(predictor_kind_name(kind));
    Predictor p({kind, 4, 6, 8, 0.0}, rng);
    auto x_f = random_vec(rng, 4);
    auto x_n = random_vec(rng, 6);
    Tape tape;
    p.predict(x_f, x_n, NetMode::Train, nullptr, &tape);
    p.zero_grad();
    const auto grads = p.backward(tape, 1.0);
    const double eps = 1e-5;
    auto check = [&](std::vector<double>& x, const std::vector<double>& g) {
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double orig = x[j];
        x[j] = orig + eps;
        const double yp = p.predict(x_f, x_n, NetMode::Eval);
        x[j] = orig - eps;
        const double ym = p.predict(x_f, x_n, NetMode::Eval);
        x[j] = orig;
        const double fd = (yp - ym) / (2.0 * eps);
        const double scale = std::max({std::abs(fd), std::abs(g[j]), 1e-6});
        CHECK(std::abs(fd - g[j]) / scale < 1e-3);
      }
    };
    check(x_f, grads.d_xf);
    check(x_n, grads.d_xn);
  }
}

TEST_CASE("tape reuse is rejected") {
  Rng rng(10);
  Predictor p({PredictorKind::NewsAlone, 2, 3, 4, 0.0}, rng);
  Tape tape;
  p.predict(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0, 3.0},
            NetMode::Train, nullptr, &tape);
  p.backward(tape, 1.0);
  CHECK_THROWS_AS(p.backward(tape, 1.0), NnError);
}

TEST_CASE("dim mismatch and kind names") {
  Rng rng(11);
  Predictor p({PredictorKind::FactorsAlone, 4, 6, 8, 0.0}, rng);
  CHECK_THROWS_AS(
      p.predict(std::vector<double>{1.0}, std::vector<double>(6, 0.0),
                NetMode::Eval),
      NnError);
  CHECK(predictor_kind_from_name("FININ") == PredictorKind::Finin);
  CHECK_THROWS_AS(predictor_kind_from_name("bogus"), NnError);
}

TEST_CASE("train-mode dropout zeroes gradients along masked paths") {
  Rng rng(12);
  // High rate so some coordinates are certainly dropped.
  Predictor p({PredictorKind::NewsAlone, 2, 32, 4, 0.6}, rng);
  Tape tape;
  Rng drop_rng(99);
  const auto x_f = random_vec(rng, 2);
  const auto x_n = random_vec(rng, 32);
  p.predict(x_f, x_n, NetMode::Train, &drop_rng, &tape);
  const auto grads = p.backward(tape, 1.0);
  bool saw_dropped = false;
  for (std::size_t j = 0; j < tape.drop_mask.size(); ++j) {
    if (tape.drop_mask[j] == 0.0) {
      saw_dropped = true;
      CHECK(grads.d_xn[j] == 0.0);
    }
  }
  CHECK(saw_dropped);
}
