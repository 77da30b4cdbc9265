#include "ssmlab/tensor.hpp"

#include <cassert>
#include <sstream>
#include <stdexcept>

#include "ssmlab/kernels.hpp"

namespace ssmlab::ad {

namespace {
thread_local Graph* t_current = nullptr;
}

std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
}

void TensorImpl::accumulate_grad(const double* g, std::size_t n) {
  ensure_grad();
  kernels::axpy(1.0, g, grad.data(), n);
}

}  // namespace detail

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double v) {
  auto impl = std::make_shared<detail::TensorImpl>();
  const auto n = ad::numel(shape);
  impl->shape = std::move(shape);
  impl->value.assign(static_cast<std::size_t>(n), v);
  return wrap(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  if (ad::numel(shape) != static_cast<std::int64_t>(data.size()))
    throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) + " does not match " +
                                std::to_string(data.size()) + " elements");
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->value.assign(data.begin(), data.end());
  return wrap(std::move(impl));
}

Tensor Tensor::param(Shape shape, std::vector<double> data) {
  Tensor t = from(std::move(shape), std::move(data));
  t.impl_->requires_grad = true;
  return t;
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

std::span<double> Tensor::leaf_data() {
  if (impl_->producer >= 0)
    throw std::logic_error("leaf_data: tensor is op output, not a leaf");
  return impl_->value;
}

void Tensor::set_requires_grad(bool v) {
  if (impl_->producer >= 0)
    throw std::logic_error("set_requires_grad: only valid on leaves");
  impl_->requires_grad = v;
}

std::span<const double> Tensor::grad() const {
  if (impl_->grad.empty())
    throw std::logic_error("grad: no gradient present (did backward run?)");
  return impl_->grad;
}

std::span<double> Tensor::grad_mutable() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (!impl_->grad.empty()) impl_->grad.assign(impl_->grad.size(), 0.0);
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return impl_->value[0];
}

double Tensor::at(std::initializer_list<std::int64_t> idx) const {
  const Shape& s = impl_->shape;
  if (idx.size() != s.size()) throw std::invalid_argument("at: rank mismatch");
  std::int64_t off = 0;
  std::size_t i = 0;
  for (auto v : idx) {
    off = off * s[i] + v;
    ++i;
  }
  return impl_->value[static_cast<std::size_t>(off)];
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->value = impl_->value;
  impl->requires_grad = impl_->requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->value = impl_->value;
  return wrap(std::move(impl));
}

Graph::Graph() {
  prev_ = t_current;
  t_current = this;
}

Graph::~Graph() {
  nodes_.clear();
  if (t_current == this) t_current = prev_;
}

Graph* Graph::current() { return t_current; }

bool recording() { return t_current != nullptr; }

int Graph::add_node(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                shape_str(loss.shape()));
  auto root = loss.impl();
  root->ensure_grad();
  root->grad[0] += 1.0;
  if (root->producer < 0) return;  // loss is a leaf

  // Mark nodes reachable from the loss producer.
  std::vector<char> needed(nodes_.size(), 0);
  std::vector<int> stack{root->producer};
  needed[static_cast<std::size_t>(root->producer)] = 1;
  while (!stack.empty()) {
    int id = stack.back();
    stack.pop_back();
    for (const auto& in : nodes_[static_cast<std::size_t>(id)].inputs) {
      if (in->producer >= 0 && !needed[static_cast<std::size_t>(in->producer)]) {
        needed[static_cast<std::size_t>(in->producer)] = 1;
        stack.push_back(in->producer);
      }
    }
  }
  // Insertion order is a topological order: reverse sweep visits each node
  // exactly once after all of its consumers.
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (!needed[i]) continue;
    Node& n = nodes_[i];
    bool any = false;
    for (const auto& in : n.inputs) any = any || in->requires_grad;
    if (any && n.backward) n.backward();
  }
  nodes_.clear();  // free saved activations
}

}  // namespace ssmlab::ad
