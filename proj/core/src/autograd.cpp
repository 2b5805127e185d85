#include "metaseg/tensor.hpp"

namespace metaseg {

namespace {

struct TapeState {
  std::vector<std::function<void()>> nodes;
  bool grad_enabled = true;
};

TapeState& tape() {
  thread_local TapeState state;
  return state;
}

}  // namespace

bool grad_enabled() { return tape().grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(tape().grad_enabled) { tape().grad_enabled = false; }
NoGradGuard::~NoGradGuard() { tape().grad_enabled = prev_; }

void tape_push(std::function<void()> node) { tape().nodes.push_back(std::move(node)); }
size_t tape_size() { return tape().nodes.size(); }
void tape_clear() { tape().nodes.clear(); }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ValueError("backward: undefined loss tensor");
  if (loss.numel() != 1)
    throw ValueError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  auto& t = tape();
  if (t.nodes.empty()) throw ValueError("backward: computation tape is empty");

  loss.impl()->ensure_grad();
  if (loss.dtype() == Dtype::f32)
    loss.impl()->grad32[0] += 1.0f;
  else
    loss.impl()->grad64[0] += 1.0;

  for (auto it = t.nodes.rbegin(); it != t.nodes.rend(); ++it) (*it)();
  t.nodes.clear();
}

}  // namespace metaseg
