#include "mfn/predictors.hpp"

#include <array>
#include <cmath>

namespace mfn {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> add(std::span<const double> a, std::span<const double> b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

}  // namespace

std::vector<double> concat(std::span<const double> a,
                           std::span<const double> b) {
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

const char* predictor_kind_name(PredictorKind k) {
  switch (k) {
    case PredictorKind::FactorsAlone: return "FACTORS_ALONE";
    case PredictorKind::NewsAlone: return "NEWS_ALONE";
    case PredictorKind::Finin: return "FININ";
    case PredictorKind::FusionCombination: return "FUSION_COMBINATION";
    case PredictorKind::FusionSummation: return "FUSION_SUMMATION";
    case PredictorKind::FusionAttention: return "FUSION_ATTENTION";
  }
  return "?";
}

PredictorKind predictor_kind_from_name(const std::string& name) {
  for (PredictorKind k :
       {PredictorKind::FactorsAlone, PredictorKind::NewsAlone,
        PredictorKind::Finin, PredictorKind::FusionCombination,
        PredictorKind::FusionSummation, PredictorKind::FusionAttention}) {
    if (name == predictor_kind_name(k)) return k;
  }
  throw NnError("unknown predictor kind: " + name);
}

Predictor::Predictor(const PredictorSpec& spec, Rng& rng) : spec_(spec) {
  if (spec.hidden_dim < 1 || spec.d_f < 1 || spec.d_n < 1) {
    throw NnError("invalid predictor spec dimensions");
  }
  const int h = spec.hidden_dim;
  switch (spec.kind) {
    case PredictorKind::FactorsAlone:
      layers_.emplace_back("hidden1", spec.d_f, h, Activation::Relu);
      has_skip_projection_ = spec.d_f != h;
      if (has_skip_projection_) {
        layers_.emplace_back("skip1", spec.d_f, h, Activation::Identity,
                             /*bias=*/false);
      }
      layers_.emplace_back("hidden2", h, h, Activation::Relu);
      layers_.emplace_back("out", h, 1, Activation::Identity);
      break;
    case PredictorKind::NewsAlone:
      layers_.emplace_back("out", spec.d_n, 1, Activation::Identity);
      break;
    case PredictorKind::FusionCombination:
      bottleneck_dim_ = (spec.d_n + 1) / 2;
      layers_.emplace_back("bottleneck", spec.d_n, bottleneck_dim_,
                           Activation::Relu);
      layers_.emplace_back("fusion", spec.d_f + bottleneck_dim_, h,
                           Activation::Relu);
      layers_.emplace_back("out", h, 1, Activation::Identity);
      break;
    case PredictorKind::FusionSummation:
      layers_.emplace_back("proj_f", spec.d_f, h, Activation::Relu);
      layers_.emplace_back("proj_n", spec.d_n, h, Activation::Relu);
      layers_.emplace_back("out", h, 1, Activation::Identity);
      break;
    case PredictorKind::FusionAttention:
      layers_.emplace_back("proj_f", spec.d_f, h, Activation::Relu);
      layers_.emplace_back("proj_n", spec.d_n, h, Activation::Relu);
      layers_.emplace_back("logits", spec.d_f + spec.d_n, 2,
                           Activation::Identity);
      layers_.emplace_back("out", h, 1, Activation::Identity);
      break;
    case PredictorKind::Finin:
      layers_.emplace_back("proj_f", spec.d_f, h, Activation::Relu);
      layers_.emplace_back("proj_n", spec.d_n, h, Activation::Relu);
      layers_.emplace_back("out", h, 1, Activation::Identity);
      break;
  }
  for (auto& l : layers_) l.init(rng);
}

void Predictor::check_dims(std::span<const double> x_f,
                           std::span<const double> x_n) const {
  if (static_cast<int>(x_f.size()) != spec_.d_f ||
      static_cast<int>(x_n.size()) != spec_.d_n) {
    throw NnError("predictor input dims (" + std::to_string(x_f.size()) + "," +
                  std::to_string(x_n.size()) + ") do not match spec (" +
                  std::to_string(spec_.d_f) + "," + std::to_string(spec_.d_n) +
                  ")");
  }
}

double Predictor::predict(std::span<const double> x_f,
                          std::span<const double> x_n, NetMode mode, Rng* rng,
                          Tape* tape) const {
  check_dims(x_f, x_n);
  if (mode == NetMode::Train && spec_.dropout_rate > 0.0 && rng == nullptr) {
    throw NnError("train-mode predict requires an rng for dropout");
  }
  auto cache = [&](std::size_t i) -> DenseCache* {
    if (tape == nullptr) return nullptr;
    if (tape->caches.size() <= i) tape->caches.resize(i + 1);
    return &tape->caches[i];
  };
  auto keep = [&](std::vector<double> v) -> std::vector<double>& {
    tape->vecs.push_back(std::move(v));
    return tape->vecs.back();
  };
  auto drop = [&](std::span<const double> v) {
    return dropout(v, spec_.dropout_rate, mode, rng,
                   tape != nullptr ? &tape->drop_mask : nullptr);
  };
  if (tape != nullptr) {
    tape->vecs.clear();
    tape->scalars.clear();
    tape->consumed = false;
  }

  switch (spec_.kind) {
    case PredictorKind::FactorsAlone: {
      std::size_t ci = 0;
      const auto& hidden1 = layers_[0];
      const auto& hidden2 = layers_[has_skip_projection_ ? 2 : 1];
      const auto& out = layers_[has_skip_projection_ ? 3 : 2];
      auto a1 = hidden1.forward(x_f, cache(ci++));
      std::vector<double> s1;
      if (has_skip_projection_) {
        s1 = layers_[1].forward(x_f, cache(ci++));
      } else {
        s1.assign(x_f.begin(), x_f.end());
      }
      auto h1 = add(a1, s1);
      auto a2 = hidden2.forward(h1, cache(ci++));
      auto h2 = add(a2, h1);
      auto d = drop(h2);
      return out.forward(d, cache(ci++))[0];
    }
    case PredictorKind::NewsAlone: {
      auto d = drop(x_n);
      return layers_[0].forward(d, cache(0))[0];
    }
    case PredictorKind::FusionCombination: {
      auto bn = layers_[0].forward(x_n, cache(0));
      auto c = concat(x_f, bn);
      auto u = layers_[1].forward(c, cache(1));
      auto d = drop(u);
      return layers_[2].forward(d, cache(2))[0];
    }
    case PredictorKind::FusionSummation: {
      auto pf = layers_[0].forward(x_f, cache(0));
      auto pn = layers_[1].forward(x_n, cache(1));
      auto z = add(pf, pn);
      auto d = drop(z);
      return layers_[2].forward(d, cache(2))[0];
    }
    case PredictorKind::FusionAttention: {
      auto pf = layers_[0].forward(x_f, cache(0));
      auto pn = layers_[1].forward(x_n, cache(1));
      auto logits = layers_[2].forward(concat(x_f, x_n), cache(2));
      auto a = softmax(logits);
      std::vector<double> z(pf.size());
      for (std::size_t i = 0; i < z.size(); ++i) {
        z[i] = a[0] * pf[i] + a[1] * pn[i];
      }
      if (tape != nullptr) {
        keep(std::move(pf));
        keep(std::move(pn));
        keep(a);
      }
      auto d = drop(z);
      return layers_[3].forward(d, cache(3))[0];
    }
    case PredictorKind::Finin: {
      auto pf = layers_[0].forward(x_f, cache(0));
      auto pn = layers_[1].forward(x_n, cache(1));
      const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.hidden_dim));
      const double wgt = dot(pf, pn) * scale;
      std::vector<double> z(pf.size());
      for (std::size_t i = 0; i < z.size(); ++i) z[i] = pf[i] + wgt * pn[i];
      if (tape != nullptr) {
        keep(std::move(pf));
        keep(std::move(pn));
        tape->scalars.push_back(wgt);
      }
      auto d = drop(z);
      return layers_[2].forward(d, cache(2))[0];
    }
  }
  throw NnError("unreachable predictor kind");
}

InputGrads Predictor::backward(Tape& tape, double grad_output) {
  if (tape.consumed) {
    throw NnError("tape already consumed");
  }
  tape.consumed = true;
  InputGrads grads;
  grads.d_xf.assign(spec_.d_f, 0.0);
  grads.d_xn.assign(spec_.d_n, 0.0);
  const std::array<double, 1> g_out{grad_output};

  auto apply_mask = [&](std::vector<double>& g) {
    if (tape.drop_mask.empty()) return;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= tape.drop_mask[i];
  };

  switch (spec_.kind) {
    case PredictorKind::FactorsAlone: {
      auto& hidden1 = layers_[0];
      auto& hidden2 = layers_[has_skip_projection_ ? 2 : 1];
      auto& out = layers_[has_skip_projection_ ? 3 : 2];
      const std::size_t ci_out = has_skip_projection_ ? 3 : 2;
      const std::size_t ci_h2 = has_skip_projection_ ? 2 : 1;
      auto grad_d = out.backward(tape.caches[ci_out], g_out);
      apply_mask(grad_d);  // grad wrt h2
      auto grad_h1 = hidden2.backward(tape.caches[ci_h2], grad_d);
      for (std::size_t i = 0; i < grad_h1.size(); ++i) grad_h1[i] += grad_d[i];
      auto gx = hidden1.backward(tape.caches[0], grad_h1);
      if (has_skip_projection_) {
        auto gs = layers_[1].backward(tape.caches[1], grad_h1);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
      } else {
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grad_h1[i];
      }
      grads.d_xf = std::move(gx);
      break;
    }
    case PredictorKind::NewsAlone: {
      auto grad_d = layers_[0].backward(tape.caches[0], g_out);
      apply_mask(grad_d);
      grads.d_xn = std::move(grad_d);
      break;
    }
    case PredictorKind::FusionCombination: {
      auto grad_d = layers_[2].backward(tape.caches[2], g_out);
      apply_mask(grad_d);  // grad wrt fusion output
      auto grad_c = layers_[1].backward(tape.caches[1], grad_d);
      std::vector<double> grad_bn(grad_c.begin() + spec_.d_f, grad_c.end());
      for (int j = 0; j < spec_.d_f; ++j) grads.d_xf[j] = grad_c[j];
      grads.d_xn = layers_[0].backward(tape.caches[0], grad_bn);
      break;
    }
    case PredictorKind::FusionSummation: {
      auto grad_d = layers_[2].backward(tape.caches[2], g_out);
      apply_mask(grad_d);  // grad wrt z, identical for both projections
      grads.d_xf = layers_[0].backward(tape.caches[0], grad_d);
      grads.d_xn = layers_[1].backward(tape.caches[1], grad_d);
      break;
    }
    case PredictorKind::FusionAttention: {
      const auto& pf = tape.vecs[0];
      const auto& pn = tape.vecs[1];
      const auto& a = tape.vecs[2];
      auto grad_z = layers_[3].backward(tape.caches[3], g_out);
      apply_mask(grad_z);
      std::vector<double> grad_pf(pf.size()), grad_pn(pn.size());
      for (std::size_t i = 0; i < pf.size(); ++i) {
        grad_pf[i] = a[0] * grad_z[i];
        grad_pn[i] = a[1] * grad_z[i];
      }
      const double ga0 = dot(pf, grad_z);
      const double ga1 = dot(pn, grad_z);
      const double mix = a[0] * ga0 + a[1] * ga1;
      const std::array<double, 2> grad_logits{a[0] * (ga0 - mix),
                                              a[1] * (ga1 - mix)};
      auto grad_cat = layers_[2].backward(tape.caches[2], grad_logits);
      grads.d_xf = layers_[0].backward(tape.caches[0], grad_pf);
      grads.d_xn = layers_[1].backward(tape.caches[1], grad_pn);
      for (int j = 0; j < spec_.d_f; ++j) grads.d_xf[j] += grad_cat[j];
      for (int j = 0; j < spec_.d_n; ++j) {
        grads.d_xn[j] += grad_cat[spec_.d_f + j];
      }
      break;
    }
    case PredictorKind::Finin: {
      const auto& pf = tape.vecs[0];
      const auto& pn = tape.vecs[1];
      const double wgt = tape.scalars[0];
      const double scale = 1.0 / std::sqrt(static_cast<double>(spec_.hidden_dim));
      auto grad_z = layers_[2].backward(tape.caches[2], g_out);
      apply_mask(grad_z);
      const double gz_pn = dot(grad_z, pn);
      std::vector<double> grad_pf(pf.size()), grad_pn(pn.size());
      for (std::size_t i = 0; i < pf.size(); ++i) {
        grad_pf[i] = grad_z[i] + gz_pn * scale * pn[i];
        grad_pn[i] = wgt * grad_z[i] + gz_pn * scale * pf[i];
      }
      grads.d_xf = layers_[0].backward(tape.caches[0], grad_pf);
      grads.d_xn = layers_[1].backward(tape.caches[1], grad_pn);
      break;
    }
  }
  return grads;
}

std::pair<double, double> Predictor::attention_weights(
    std::span<const double> x_f, std::span<const double> x_n) const {
  if (spec_.kind != PredictorKind::FusionAttention) {
    throw NnError("attention_weights requires FUSION_ATTENTION");
  }
  check_dims(x_f, x_n);
  auto logits = layers_[2].forward(concat(x_f, x_n), nullptr);
  auto a = softmax(logits);
  return {a[0], a[1]};
}

std::vector<DenseLayer*> Predictor::layers() {
  std::vector<DenseLayer*> out;
  for (auto& l : layers_) out.push_back(&l);
  return out;
}

std::vector<const DenseLayer*> Predictor::layers() const {
  std::vector<const DenseLayer*> out;
  for (const auto& l : layers_) out.push_back(&l);
  return out;
}

std::size_t Predictor::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.param_count();
  return n;
}

void Predictor::zero_grad() {
  for (auto& l : layers_) l.zero_grad();
}

std::vector<double> Predictor::flat_grads() const {
  std::vector<double> out;
  out.reserve(param_count());
  for (const auto& l : layers_) {
    out.insert(out.end(), l.gw.begin(), l.gw.end());
    out.insert(out.end(), l.gb.begin(), l.gb.end());
  }
  return out;
}

}  // namespace mfn
