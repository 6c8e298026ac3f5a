#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pgr {

// 64-bit values internally; checkpoints serialize f32 (see checkpoint.hpp).
using real = double;
using Shape = std::vector<int>;

int shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. Value handle with shared storage: copies alias the
// same buffer, which is what the tape needs to accumulate gradients into
// leaves. Data is immutable by convention once an op produced it; gradients
// are the only mutated field.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value);
  static Tensor from(Shape shape, std::vector<real> data, bool requires_grad = false);
  static Tensor scalar(real value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int numel() const { return static_cast<int>(impl_->data.size()); }
  int dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  std::span<real> data() { return impl_->data; }
  std::span<const real> data() const { return impl_->data; }
  real item() const;  // requires numel()==1

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  // Lazily allocated, zero-initialized gradient buffer. Const-qualified:
  // Tensor is a shared handle, gradient accumulation mutates the shared
  // impl (a tape closure holds copies of its input handles).
  std::span<real> grad() const;
  std::span<const real> grad_view() const;  // empty span when unallocated
  bool has_grad() const { return !impl_->grad.empty(); }
  void zero_grad() const;

  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }

  // Detached copy of the values (fresh storage, no grad, no tape lineage).
  Tensor clone_detached() const;

 private:
  struct Impl {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. One tape per logical execution thread; ops record onto
// the active tape when any input requires grad. backward() replays in reverse
// and clears the tape.
class Tape {
 public:
  struct Node {
    std::function<void()> backward;
    const char* op;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  // RAII activation for the current thread.
  class Scope {
   public:
    explicit Scope(Tape& tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* previous_;
  };

  void record(std::function<void()> backward, const char* op);
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // loss must be a scalar recorded on this tape.
  void backward(const Tensor& loss);

 private:
  std::vector<Node> nodes_;
};

}  // namespace pgr
