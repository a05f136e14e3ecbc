#include "mfn/nn.hpp"

#include <algorithm>
#include <cmath>

namespace mfn {

DenseLayer::DenseLayer(std::string layer_name, int in, int out, Activation a,
                       bool bias)
    : name(std::move(layer_name)),
      in_dim(in),
      out_dim(out),
      act(a),
      has_bias(bias) {
  w.assign(static_cast<std::size_t>(out) * in, 0.0);
  b.assign(has_bias ? out : 0, 0.0);
  gw.assign(w.size(), 0.0);
  gb.assign(b.size(), 0.0);
}

void DenseLayer::init(Rng& rng) {
  const double bound = std::sqrt(6.0 / (in_dim + out_dim));
  for (auto& v : w) v = rng.uniform(-bound, bound);
  std::fill(b.begin(), b.end(), 0.0);
}

void DenseLayer::set_zero_params() {
  std::fill(w.begin(), w.end(), 0.0);
  std::fill(b.begin(), b.end(), 0.0);
}

std::vector<double> DenseLayer::forward(std::span<const double> x,
                                        DenseCache* cache) const {
  if (static_cast<int>(x.size()) != in_dim) {
    throw NnError(name + ": input size " + std::to_string(x.size()) +
                  " != in_dim " + std::to_string(in_dim));
  }
  std::vector<double> out(out_dim);
  for (int i = 0; i < out_dim; ++i) {
    double acc = has_bias ? b[i] : 0.0;
    const double* row = &w[static_cast<std::size_t>(i) * in_dim];
    for (int j = 0; j < in_dim; ++j) acc += row[j] * x[j];
    out[i] = acc;
  }
  if (cache != nullptr) {
    cache->input.assign(x.begin(), x.end());
    if (act == Activation::Relu) cache->pre = out;
  }
  if (act == Activation::Relu) {
    for (auto& v : out) v = v > 0.0 ? v : 0.0;
  }
  return out;
}

std::vector<double> DenseLayer::backward(const DenseCache& cache,
                                         std::span<const double> grad_out) {
  if (static_cast<int>(grad_out.size()) != out_dim) {
    throw NnError(name + ": grad size mismatch");
  }
  std::vector<double> grad_in(in_dim, 0.0);
  for (int i = 0; i < out_dim; ++i) {
    double g = grad_out[i];
    if (act == Activation::Relu && cache.pre[i] <= 0.0) g = 0.0;
    if (g == 0.0) continue;
    double* grow = &gw[static_cast<std::size_t>(i) * in_dim];
    const double* row = &w[static_cast<std::size_t>(i) * in_dim];
    for (int j = 0; j < in_dim; ++j) {
      grow[j] += g * cache.input[j];
      grad_in[j] += g * row[j];
    }
    if (has_bias) gb[i] += g;
  }
  return grad_in;
}

void DenseLayer::zero_grad() {
  std::fill(gw.begin(), gw.end(), 0.0);
  std::fill(gb.begin(), gb.end(), 0.0);
}

std::size_t DenseLayer::param_count() const { return w.size() + b.size(); }

std::vector<double> softmax(std::span<const double> logits) {
  double max_logit = logits[0];
  for (double v : logits) max_logit = std::max(max_logit, v);
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - max_logit);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

double kl_discrete(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) {
    throw NnError("kl_discrete: length mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * std::log(p[i] / std::max(q[i], 1e-12));
  }
  return kl;
}

std::vector<double> dropout(std::span<const double> x, double rate,
                            NetMode mode, Rng* rng,
                            std::vector<double>* mask) {
  std::vector<double> out(x.begin(), x.end());
  if (mode == NetMode::Eval || rate == 0.0) {
    if (mask != nullptr) mask->assign(x.size(), 1.0);
    return out;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  if (mask != nullptr) mask->assign(x.size(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (rng->uniform() < rate) {
      out[i] = 0.0;
    } else {
      out[i] *= keep_scale;
      if (mask != nullptr) (*mask)[i] = keep_scale;
    }
  }
  return out;
}

double linear_decay_lr(std::size_t step, std::size_t total_steps,
                       double base_lr) {
  if (step > total_steps) {
    throw NnError("linear_decay_lr: step exceeds total_steps");
  }
  return base_lr *
         (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<DenseLayer*> layers,
                     double weight_decay)
    : kind_(kind), weight_decay_(weight_decay) {
  slots_.reserve(layers.size());
  for (DenseLayer* l : layers) {
    Slot s;
    s.layer = l;
    if (kind_ == OptimizerKind::Adam) {
      s.mw.assign(l->w.size(), 0.0);
      s.vw.assign(l->w.size(), 0.0);
      s.mb.assign(l->b.size(), 0.0);
      s.vb.assign(l->b.size(), 0.0);
    }
    slots_.push_back(std::move(s));
  }
}

void Optimizer::step(double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++step_;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
  for (Slot& s : slots_) {
    DenseLayer& l = *s.layer;
    auto update = [&](std::vector<double>& p, std::vector<double>& g,
                      std::vector<double>& m, std::vector<double>& v,
                      bool decay) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (!std::isfinite(g[i])) {
          throw NnError("non-finite gradient in layer " + l.name);
        }
        if (kind_ == OptimizerKind::Adam) {
          m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
          v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
          const double mhat = m[i] / bc1;
          const double vhat = v[i] / bc2;
          p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        } else {
          p[i] -= lr * g[i];
        }
        if (decay && weight_decay_ > 0.0) {
          p[i] *= 1.0 - lr * weight_decay_;
        }
      }
    };
    update(l.w, l.gw, s.mw, s.vw, /*decay=*/true);
    update(l.b, l.gb, s.mb, s.vb, /*decay=*/false);
    l.zero_grad();
  }
}

void Optimizer::zero_grad() {
  for (Slot& s : slots_) s.layer->zero_grad();
}

}  // namespace mfn
