#pragma once

#include <string>
#include <utility>
#include <vector>

#include "metaseg/tensor.hpp"

namespace metaseg {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 2.5e-4;
};

// Decoupled weight decay; moment state kept in double regardless of the
// parameter dtype.
class AdamW {
 public:
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m, v;
  };

  AdamW(std::vector<std::pair<std::string, Tensor>> params, AdamWConfig cfg = {});

  void step(double lr);
  void zero_grad();
  int64_t steps_taken() const { return t_; }

  std::vector<Slot>& slots() { return slots_; }
  const AdamWConfig& config() const { return cfg_; }
  void restore_step_count(int64_t t) { t_ = t; }

 private:
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

// Cosine annealing from base_lr at step 0 down to 0 at total_steps-1.
double cosine_lr(double base_lr, int64_t step, int64_t total_steps);

}  // namespace metaseg
