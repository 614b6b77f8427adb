#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace contracon {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Gradient recording is on by default; NoGradGuard disables it for the
// current thread (evaluation, materialization).
class GradMode {
   public:
    static bool enabled();
    static void set_enabled(bool enabled);
};

class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// One recorded value. Nodes created by an operation while gradient recording
// is on hold their inputs and a closure that pushes the node's gradient into
// them; the set of such nodes reachable from a loss is the tape.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::uint64_t sequence = 0;  // creation order; inputs always precede outputs
    bool consumed = false;
    std::vector<NodePtr<T>> inputs;
    std::function<void(const Node&)> backward_fn;

    bool is_leaf() const { return !backward_fn; }
    void accumulate_grad(std::size_t i, T g) {
        if (grad.empty()) grad.assign(data.size(), T(0));
        grad[i] += g;
    }
    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(data.size(), T(0));
        return grad;
    }
};

// Dense row-major tensor handle with shared ownership of its node. Copying a
// Tensor aliases the same storage; use clone() for an independent copy.
template <typename T>
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}
    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag);
    bool has_grad() const { return !node_->grad.empty(); }
    // Gradient values; all zeros when nothing has been accumulated yet.
    std::vector<T> grad() const;
    void zero_grad() { node_->grad.clear(); }

    // Reverse pass from this scalar. Each recorded graph may be replayed once.
    void backward() const;

    Tensor detach() const;
    Tensor clone() const;

    const NodePtr<T>& node() const { return node_; }

   private:
    NodePtr<T> node_;
};

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

// FNV-1a over names, shapes and raw value bytes, in list order.
template <typename T>
std::uint64_t content_digest(std::span<const NamedTensor<T>> tensors);

namespace detail {

std::uint64_t next_sequence();

// Creates the output node of an operation. When recording is on and any input
// requires a gradient, the node keeps its inputs and backward closure.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> inputs,
                      std::function<void(const Node<T>&)> backward_fn);

template <typename T>
bool wants_grad(const NodePtr<T>& n) {
    return n->requires_grad;
}

}  // namespace detail

}  // namespace contracon
