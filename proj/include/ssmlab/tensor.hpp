#pragma once
// Reverse-mode autodiff: Tensor values plus a per-thread recording Graph.
//
// Usage: create leaves (Tensor::from / Tensor::param), open a Graph, run ops,
// call Graph::backward(loss). Ops record backward closures only while a Graph
// is active on the current thread and some input requires a gradient.
// backward() frees all saved activations; first-order gradients only.
//
// Tensors are handles (shared, cheap to copy). Values are immutable once an
// op has consumed them inside an active graph; leaf values may be mutated
// between graphs (that is how the optimizer steps parameters).

#include <cstdint>
#include <functional>
#include <memory>
#include <type_traits>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ssmlab::ad {

class Graph;

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

// Allocator whose resize default-initializes (no zero fill): op outputs are
// fully overwritten, and the memset per tensor dominated small-op cost.
template <typename T, typename A = std::allocator<T>>
struct default_init_allocator : public A {
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U, typename std::allocator_traits<A>::template rebind_alloc<U>>;
  };
  using A::A;
  template <typename U>
  void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <typename U, typename... Args>
  void construct(U* ptr, Args&&... args) {
    std::allocator_traits<A>::construct(static_cast<A&>(*this), ptr,
                                        std::forward<Args>(args)...);
  }
};

using Values = std::vector<double, default_init_allocator<double>>;

struct TensorImpl {
  Shape shape;
  Values value;
  Values grad;  // allocated lazily, same size as value
  bool requires_grad = false;
  int producer = -1;  // node id in `graph`, -1 for leaves
  Graph* graph = nullptr;

  void ensure_grad();
  void accumulate_grad(const double* g, std::size_t n);
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> data);
  // Leaf with requires_grad = true.
  static Tensor param(Shape shape, std::vector<double> data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->value.size()); }
  std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }

  std::span<const double> data() const { return impl_->value; }
  // Mutable access to a leaf's storage (optimizer updates, data staging).
  std::span<double> leaf_data();

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool v);
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const;
  std::span<double> grad_mutable();
  void zero_grad();

  double item() const;  // scalar tensors
  double at(std::initializer_list<std::int64_t> idx) const;

  Tensor clone() const;   // deep copy, leaf, keeps requires_grad
  Tensor detach() const;  // shares nothing with the graph; copies value

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

struct Node {
  std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
  std::vector<std::shared_ptr<detail::TensorImpl>> outputs;
  std::function<void()> backward;  // reads outputs' grads, accumulates into inputs'
};

class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Reverse-topological sweep from `loss` (must be scalar). Fills grads of
  // every requires_grad tensor that contributed, then frees all saved
  // activations. Throws std::invalid_argument on non-scalar loss.
  void backward(const Tensor& loss);

  int add_node(Node n);
  std::size_t size() const { return nodes_.size(); }

  static Graph* current();

 private:
  std::vector<Node> nodes_;
  Graph* prev_ = nullptr;
};

// True when ops on this thread should record.
bool recording();

}  // namespace ssmlab::ad
