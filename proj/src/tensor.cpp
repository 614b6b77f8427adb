#include "contracon/tensor.h"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "contracon/error.h"

namespace contracon {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace {
thread_local bool grad_mode_enabled = true;
}

bool GradMode::enabled() { return grad_mode_enabled; }
void GradMode::set_enabled(bool enabled) { grad_mode_enabled = enabled; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

namespace detail {

std::uint64_t next_sequence() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<NodePtr<T>> inputs,
                      std::function<void(const Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->sequence = next_sequence();
    bool record = GradMode::enabled() &&
                  std::any_of(inputs.begin(), inputs.end(), [](const NodePtr<T>& n) { return n->requires_grad; });
    if (record) {
        node->requires_grad = true;
        node->inputs = std::move(inputs);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

}  // namespace detail

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
    for (std::size_t e : shape) {
        if (e == 0) fail(ErrorCode::shape, "zero extent in shape " + shape_to_string(shape));
    }
    if (shape_numel(shape) != data.size()) {
        fail(ErrorCode::shape, "shape " + shape_to_string(shape) + " does not match " + std::to_string(data.size()) +
                                   " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
    node_->sequence = detail::next_sequence();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::matrix(std::initializer_list<std::initializer_list<T>> rows, bool requires_grad) {
    std::size_t r = rows.size();
    std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) fail(ErrorCode::shape, "ragged matrix literal");
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) fail(ErrorCode::shape, "item() on tensor of shape " + shape_to_string(shape()));
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) fail(ErrorCode::shape, "index rank mismatch for " + shape_to_string(shape()));
    std::size_t offset = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= node_->shape[axis]) fail(ErrorCode::shape, "index out of range for " + shape_to_string(shape()));
        offset = offset * node_->shape[axis] + i;
        ++axis;
    }
    return node_->data[offset];
}

template <typename T>
void Tensor<T>::set_requires_grad(bool flag) {
    if (!node_->is_leaf()) fail(ErrorCode::usage, "requires_grad can only be changed on leaf tensors");
    node_->requires_grad = flag;
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
    if (node_->grad.empty()) return std::vector<T>(node_->data.size(), T(0));
    return node_->grad;
}

template <typename T>
void Tensor<T>::backward() const {
    if (numel() != 1) fail(ErrorCode::usage, "backward() needs a scalar loss, got " + shape_to_string(shape()));
    if (node_->consumed) fail(ErrorCode::usage, "graph already replayed; run the forward pass again");
    if (!node_->requires_grad || node_->is_leaf()) {
        if (node_->requires_grad) {
            node_->accumulate_grad(0, T(1));
            return;
        }
        fail(ErrorCode::usage, "loss was not produced by recorded operations");
    }

    // Collect the recorded subgraph; sequence order is a topological order.
    std::vector<Node<T>*> order;
    std::vector<Node<T>*> stack{node_.get()};
    std::unordered_set<const Node<T>*> seen;
    while (!stack.empty()) {
        Node<T>* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (const auto& in : n->inputs) {
            if (in->requires_grad) stack.push_back(in.get());
        }
    }
    std::sort(order.begin(), order.end(), [](const Node<T>* a, const Node<T>* b) { return a->sequence > b->sequence; });

    node_->accumulate_grad(0, T(1));
    for (Node<T>* n : order) {
        if (n->consumed) fail(ErrorCode::usage, "graph already replayed; run the forward pass again");
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Released only after the loop: clearing inputs may drop the last owner
    // of a node that is still listed in `order`.
    std::vector<NodePtr<T>> released;
    for (Node<T>* n : order) {
        if (n->is_leaf()) continue;
        n->consumed = true;
        n->backward_fn = nullptr;
        for (auto& in : n->inputs) released.push_back(std::move(in));
        n->inputs.clear();
        n->grad.clear();
        n->grad.shrink_to_fit();
    }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    auto node = std::make_shared<Node<T>>();
    node->shape = node_->shape;
    node->data = node_->data;
    node->sequence = detail::next_sequence();
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
    Tensor out = detach();
    out.node_->requires_grad = node_->requires_grad && node_->is_leaf();
    return out;
}

template <typename T>
std::uint64_t content_digest(std::span<const NamedTensor<T>> tensors) {
    std::uint64_t h = 14695981039346656037ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& nt : tensors) {
        mix(nt.name.data(), nt.name.size());
        for (std::size_t e : nt.tensor.shape()) {
            const std::uint64_t e64 = e;
            mix(&e64, sizeof e64);
        }
        mix(nt.tensor.values().data(), nt.tensor.numel() * sizeof(T));
    }
    return h;
}

template std::uint64_t content_digest(std::span<const NamedTensor<float>>);
template std::uint64_t content_digest(std::span<const NamedTensor<double>>);
template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> detail::make_result(Shape, std::vector<float>, std::vector<NodePtr<float>>,
                                           std::function<void(const Node<float>&)>);
template Tensor<double> detail::make_result(Shape, std::vector<double>, std::vector<NodePtr<double>>,
                                            std::function<void(const Node<double>&)>);

}  // namespace contracon
