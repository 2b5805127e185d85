#include "metaseg/optimizer.hpp"

#include <cmath>

namespace metaseg {

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg) : cfg_(cfg) {
  for (auto& [name, t] : params) {
    Slot s;
    s.name = name;
    s.param = t;
    s.m.assign(static_cast<size_t>(t.numel()), 0.0);
    s.v.assign(static_cast<size_t>(t.numel()), 0.0);
    slots_.push_back(std::move(s));
  }
}

void AdamW::step(double lr) {
  t_++;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& s : slots_) {
    if (!s.param.has_grad()) continue;
    std::vector<double> g = s.param.grad_vector();
    int64_t n = s.param.numel();
    for (int64_t i = 0; i < n; ++i) {
      size_t k = static_cast<size_t>(i);
      s.m[k] = cfg_.beta1 * s.m[k] + (1.0 - cfg_.beta1) * g[k];
      s.v[k] = cfg_.beta2 * s.v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      double mhat = s.m[k] / bc1;
      double vhat = s.v[k] / bc2;
      double p = s.param.at(i);
      p -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p);
      s.param.set(i, p);
    }
  }
}

void AdamW::zero_grad() {
  for (auto& s : slots_) s.param.zero_grad();
}

double cosine_lr(double base_lr, int64_t step, int64_t total_steps) {
  if (total_steps <= 1) return base_lr;
  double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  t = std::min(std::max(t, 0.0), 1.0);
  return base_lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

}  // namespace metaseg
