#include "contracon/adapter.h"

#include <string>

#include "contracon/error.h"
#include "contracon/ops.h"

namespace contracon {

GateMode parse_gate_mode(std::string_view name) {
    if (name == "learnable") return GateMode::learnable;
    if (name == "always_on") return GateMode::always_on;
    if (name == "off") return GateMode::off;
    fail(ErrorCode::config, "unknown gate mode '" + std::string(name) + "'");
}

std::string_view to_string(GateMode mode) {
    switch (mode) {
        case GateMode::learnable: return "learnable";
        case GateMode::always_on: return "always_on";
        case GateMode::off: return "off";
    }
    return "learnable";
}

template <typename T>
Tensor<T> adapt_weight(const Tensor<T>& base, const Tensor<T>& kernel, const Tensor<T>& alpha, GateMode mode) {
    // The base matrix is frozen; detach so no gradient can be routed into it
    // even if the caller hands in a trainable tensor.
    const Tensor<T> w = base.requires_grad() ? base.detach() : base;
    Tensor<T> convolved = conv2d_same(w, kernel);
    switch (mode) {
        case GateMode::learnable: return add(convolved, mul_scalar(w, sigmoid(alpha)));
        case GateMode::always_on: return add(convolved, w);
        case GateMode::off: return convolved;
    }
    return convolved;
}

template <typename T>
std::vector<NamedTensor<T>> TaskAdapter<T>::named_parameters() const {
    std::vector<NamedTensor<T>> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        for (std::size_t h = 0; h < layer.query_kernel.size(); ++h) {
            const std::string hs = "." + std::to_string(h);
            out.push_back({p + "kernel.query" + hs, layer.query_kernel[h]});
            out.push_back({p + "kernel.key" + hs, layer.key_kernel[h]});
            out.push_back({p + "kernel.value" + hs, layer.value_kernel[h]});
            out.push_back({p + "gate.query" + hs, layer.query_gate[h]});
            out.push_back({p + "gate.key" + hs, layer.key_gate[h]});
            out.push_back({p + "gate.value" + hs, layer.value_gate[h]});
        }
        out.push_back({p + "norm1.gamma", layer.norm1.gamma});
        out.push_back({p + "norm1.beta", layer.norm1.beta});
        out.push_back({p + "norm2.gamma", layer.norm2.gamma});
        out.push_back({p + "norm2.beta", layer.norm2.beta});
    }
    out.push_back({"final_norm.gamma", final_norm.gamma});
    out.push_back({"final_norm.beta", final_norm.beta});
    out.push_back({"pool.weight", pool.weight});
    out.push_back({"pool.bias", pool.bias});
    out.push_back({"head.weight", head.weight});
    out.push_back({"head.bias", head.bias});
    return out;
}

template <typename T>
std::vector<Tensor<T>> TaskAdapter<T>::parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& nt : named_parameters()) out.push_back(nt.tensor);
    return out;
}

template <typename T>
std::size_t TaskAdapter<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.numel();
    return n;
}

namespace {

template <typename T>
LayerNormWeights<T> trainable_copy(const LayerNormWeights<T>& src) {
    LayerNormWeights<T> out{src.gamma.detach(), src.beta.detach()};
    out.gamma.set_requires_grad(true);
    out.beta.set_requires_grad(true);
    return out;
}

template <typename T>
Tensor<T> scaled_delta(std::size_t k, T center) {
    Tensor<T> t = Tensor<T>::zeros({k, k}, true);
    t.data()[(k / 2) * k + k / 2] = center;
    return t;
}

}  // namespace

template <typename T>
TaskAdapter<T> init_adapter(const Backbone<T>& backbone, int task_id, std::vector<int> classes,
                            std::size_t kernel_size, GateMode gate_mode, std::uint64_t seed) {
    if (!backbone.frozen()) fail(ErrorCode::usage, "init_adapter: backbone must be frozen first");
    if (kernel_size == 0 || kernel_size % 2 == 0) {
        fail(ErrorCode::config, "kernel size must be odd and positive, got " + std::to_string(kernel_size));
    }
    const ModelConfig& config = backbone.config();
    const std::size_t bound = 2 * std::min(config.embed_dim, config.head_dim()) + 1;
    if (kernel_size > bound) {
        fail(ErrorCode::config, "kernel size " + std::to_string(kernel_size) + " exceeds " + std::to_string(bound) +
                                    " for " + std::to_string(config.embed_dim) + "x" +
                                    std::to_string(config.head_dim()) + " projections");
    }
    if (classes.empty()) fail(ErrorCode::config, "init_adapter: task has no classes");

    TaskAdapter<T> a;
    a.task_id = task_id;
    a.kernel_size = kernel_size;
    a.gate_mode = gate_mode;
    a.config = config;
    a.classes = std::move(classes);

    const auto& base = backbone.weights();
    for (std::size_t l = 0; l < config.layers; ++l) {
        AdapterLayer<T> layer;
        for (std::size_t h = 0; h < config.heads; ++h) {
            layer.query_kernel.push_back(scaled_delta<T>(kernel_size, T(0.5)));
            layer.key_kernel.push_back(scaled_delta<T>(kernel_size, T(0.5)));
            layer.value_kernel.push_back(scaled_delta<T>(kernel_size, T(0.5)));
            layer.query_gate.push_back(Tensor<T>::zeros({1}, true));
            layer.key_gate.push_back(Tensor<T>::zeros({1}, true));
            layer.value_gate.push_back(Tensor<T>::zeros({1}, true));
        }
        layer.norm1 = trainable_copy(base.layers[l].norm1);
        layer.norm2 = trainable_copy(base.layers[l].norm2);
        a.layers.push_back(std::move(layer));
    }
    a.final_norm = trainable_copy(base.final_norm);
    a.pool = {base.pool.weight.detach(), base.pool.bias.detach()};
    a.pool.weight.set_requires_grad(true);
    a.pool.bias.set_requires_grad(true);

    Rng rng(seed);
    const std::size_t d = config.embed_dim, c = a.classes.size();
    std::vector<T> head(d * c);
    for (T& v : head) v = static_cast<T>(rng.truncated_normal(0.02));
    a.head = {Tensor<T>({d, c}, std::move(head), true), Tensor<T>::zeros({c}, true)};
    return a;
}

template <typename T>
void check_compatible(const Backbone<T>& backbone, const TaskAdapter<T>& adapter) {
    const ModelConfig& b = backbone.config();
    const ModelConfig& a = adapter.config;
    if (a.embed_dim != b.embed_dim || a.layers != b.layers || a.heads != b.heads || a.head_dim() != b.head_dim() ||
        adapter.layers.size() != b.layers) {
        fail(ErrorCode::config_mismatch,
             "adapter for task " + std::to_string(adapter.task_id) + " expects d=" + std::to_string(a.embed_dim) +
                 " L=" + std::to_string(a.layers) + " H=" + std::to_string(a.heads) + " but backbone has d=" +
                 std::to_string(b.embed_dim) + " L=" + std::to_string(b.layers) + " H=" + std::to_string(b.heads));
    }
    for (const auto& layer : adapter.layers) {
        if (layer.query_kernel.size() != b.heads || layer.norm1.gamma.dim(0) != b.embed_dim) {
            fail(ErrorCode::config_mismatch, "adapter tensors do not match the backbone architecture");
        }
    }
    if (adapter.head.weight.dim(0) != b.embed_dim || adapter.head.weight.dim(1) != adapter.classes.size()) {
        fail(ErrorCode::config_mismatch, "adapter head does not match its class list");
    }
}

template <typename T>
CctWeights<T> adapted_weights(const Backbone<T>& backbone, const TaskAdapter<T>& adapter) {
    check_compatible(backbone, adapter);
    CctWeights<T> w = backbone.weights();
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& al = adapter.layers[l];
        auto& attn = w.layers[l].attention;
        for (std::size_t h = 0; h < attn.query.size(); ++h) {
            attn.query[h] = adapt_weight(attn.query[h], al.query_kernel[h], al.query_gate[h], adapter.gate_mode);
            attn.key[h] = adapt_weight(attn.key[h], al.key_kernel[h], al.key_gate[h], adapter.gate_mode);
            attn.value[h] = adapt_weight(attn.value[h], al.value_kernel[h], al.value_gate[h], adapter.gate_mode);
        }
        w.layers[l].norm1 = al.norm1;
        w.layers[l].norm2 = al.norm2;
    }
    w.final_norm = adapter.final_norm;
    w.pool = adapter.pool;
    w.head = adapter.head;
    return w;
}

template <typename T>
TaskModel<T>::TaskModel(ModelConfig config, CctWeights<T> weights, InputNormalization normalization, int task_id,
                        std::vector<int> classes)
    : config_(std::move(config)),
      weights_(std::move(weights)),
      normalization_(std::move(normalization)),
      task_id_(task_id),
      classes_(std::move(classes)) {
    if (weights_.head.weight.dim(1) != classes_.size()) {
        fail(ErrorCode::config, "task model head size does not match its class list");
    }
}

template <typename T>
TaskModel<T> TaskModel<T>::from_base(const Backbone<T>& backbone, int task_id) {
    if (!backbone.frozen()) fail(ErrorCode::usage, "task models require a frozen backbone");
    return TaskModel(backbone.config(), backbone.weights(), backbone.normalization(), task_id, backbone.classes());
}

template <typename T>
Tensor<T> TaskModel<T>::logits(std::span<const Image> images) const {
    NoGradGuard no_grad;
    ForwardContext<T> ctx;
    return forward_logits(weights_, config_, images_to_batch<T>(images, normalization_), ctx, classes_.size());
}

template <typename T>
Tensor<T> TaskModel<T>::features(std::span<const Image> images) const {
    NoGradGuard no_grad;
    ForwardContext<T> ctx;
    return pooled_features(weights_, config_, images_to_batch<T>(images, normalization_), ctx);
}

template <typename T>
std::vector<std::vector<double>> TaskModel<T>::predict_proba(std::span<const Image> images) const {
    NoGradGuard no_grad;
    Tensor<T> probs = softmax(logits(images), -1);
    const std::size_t c = probs.dim(1);
    std::vector<std::vector<double>> out(images.size(), std::vector<double>(c));
    for (std::size_t i = 0; i < images.size(); ++i)
        for (std::size_t j = 0; j < c; ++j) out[i][j] = static_cast<double>(probs.values()[i * c + j]);
    return out;
}

template <typename T>
TaskModel<T> materialize(const Backbone<T>& backbone, const TaskAdapter<T>& adapter) {
    if (!backbone.frozen()) fail(ErrorCode::usage, "materialize: backbone must be frozen");
    NoGradGuard no_grad;
    CctWeights<T> w = adapted_weights(backbone, adapter);
    // Snapshot the adapter-owned tensors so later training cannot alter this model.
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        w.layers[l].norm1 = {w.layers[l].norm1.gamma.detach(), w.layers[l].norm1.beta.detach()};
        w.layers[l].norm2 = {w.layers[l].norm2.gamma.detach(), w.layers[l].norm2.beta.detach()};
    }
    w.final_norm = {w.final_norm.gamma.detach(), w.final_norm.beta.detach()};
    w.pool = {w.pool.weight.detach(), w.pool.bias.detach()};
    w.head = {w.head.weight.detach(), w.head.bias.detach()};
    return TaskModel<T>(backbone.config(), std::move(w), backbone.normalization(), adapter.task_id, adapter.classes);
}

TaskParamLedger count_task_params(const ModelConfig& config, std::size_t kernel_size, std::size_t classes) {
    TaskParamLedger ledger;
    const std::size_t mats = 3 * config.layers * config.heads;
    const std::size_t d = config.embed_dim;
    ledger.kernels = mats * kernel_size * kernel_size;
    ledger.gates = mats;
    ledger.layernorms = 2 * d * (2 * config.layers + 1);
    ledger.pool = d + 1;
    ledger.head = d * classes + classes;
    ledger.total = ledger.kernels + ledger.gates + ledger.layernorms + ledger.pool + ledger.head;
    return ledger;
}

#define CONTRACON_INSTANTIATE_ADAPTER(T)                                                                       \
    template Tensor<T> adapt_weight(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, GateMode);          \
    template struct TaskAdapter<T>;                                                                            \
    template TaskAdapter<T> init_adapter(const Backbone<T>&, int, std::vector<int>, std::size_t, GateMode,    \
                                         std::uint64_t);                                                       \
    template void check_compatible(const Backbone<T>&, const TaskAdapter<T>&);                                \
    template CctWeights<T> adapted_weights(const Backbone<T>&, const TaskAdapter<T>&);                        \
    template class TaskModel<T>;                                                                               \
    template TaskModel<T> materialize(const Backbone<T>&, const TaskAdapter<T>&);

CONTRACON_INSTANTIATE_ADAPTER(float)
CONTRACON_INSTANTIATE_ADAPTER(double)

#undef CONTRACON_INSTANTIATE_ADAPTER

}  // namespace contracon
