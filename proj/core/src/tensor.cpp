#include "pgr/tensor.hpp"

#include <chrono>
#include <cstdlib>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pgr {

int shape_numel(const Shape& shape) {
  int n = 1;
  for (int d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor extent");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  int n = shape_numel(shape);
  t.impl_->shape = std::move(shape);
  t.impl_->data.assign(static_cast<std::size_t>(n), real(0));
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::full(Shape shape, real value) {
  Tensor t = zeros(std::move(shape));
  for (real& v : t.impl_->data) v = value;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<real> data, bool requires_grad) {
  if (static_cast<std::size_t>(shape_numel(shape)) != data.size())
    throw std::invalid_argument("tensor data length does not match shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(real value) { return from({1}, {value}); }

real Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor, got " + shape_str(shape()));
  return impl_->data[0];
}

std::span<real> Tensor::grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), real(0));
  return impl_->grad;
}

std::span<const real> Tensor::grad_view() const { return impl_->grad; }

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), real(0));
}

Tensor Tensor::clone_detached() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

namespace {
thread_local Tape* g_active_tape = nullptr;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Tape::Scope::~Scope() { g_active_tape = previous_; }

void Tape::record(std::function<void()> backward, const char* op) {
  nodes_.push_back(Node{std::move(backward), op});
}

void Tape::backward(const Tensor& loss) {
  if (nodes_.empty()) throw std::logic_error("backward on an empty tape");
  if (!loss.defined() || loss.numel() != 1)
    throw std::logic_error("backward requires a scalar loss");
  Tensor seed = loss;  // non-const view of the same impl
  seed.grad()[0] = real(1);
  static const bool profile = std::getenv("PGR_PROFILE_TAPE") != nullptr;
  if (profile) {
    static std::map<std::string, double> acc;
    static long calls = 0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto t0 = std::chrono::steady_clock::now();
      it->backward();
      acc[it->op] += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    if (++calls % 20 == 0) {
      std::fprintf(stderr, "tape backward profile (%ld calls):\n", calls);
      for (auto& [op, ms] : acc) std::fprintf(stderr, "  %-18s %8.2f ms\n", op.c_str(), ms);
    }
  } else {
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }
  nodes_.clear();
}

}  // namespace pgr
