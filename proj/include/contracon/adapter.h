#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "contracon/backbone.h"
#include "contracon/classifier.h"

namespace contracon {

// How the base weight is mixed back into the convolved weight:
//   learnable: W'' = conv(W, F) + sigmoid(alpha) * W
//   always_on: W'' = conv(W, F) + W
//   off:       W'' = conv(W, F)
enum class GateMode { learnable, always_on, off };

GateMode parse_gate_mode(std::string_view name);
std::string_view to_string(GateMode mode);

// W'' for one projection matrix. Differentiable in `kernel` and `alpha`; the
// base matrix is treated as a constant.
template <typename T>
Tensor<T> adapt_weight(const Tensor<T>& base, const Tensor<T>& kernel, const Tensor<T>& alpha, GateMode mode);

template <typename T>
struct AdapterLayer {
    // Indexed by head. Kernels are k×k, gates hold one value.
    std::vector<Tensor<T>> query_kernel, key_kernel, value_kernel;
    std::vector<Tensor<T>> query_gate, key_gate, value_gate;
    LayerNormWeights<T> norm1;
    LayerNormWeights<T> norm2;
};

// Per-task learnables applied on top of the frozen first-task backbone:
// convolution kernels and skip gates for every Q/K/V head matrix, plus
// replacement layernorms, sequence-pool projection and classifier head.
template <typename T>
struct TaskAdapter {
    int task_id = 0;
    std::size_t kernel_size = 15;
    GateMode gate_mode = GateMode::learnable;
    ModelConfig config;
    std::vector<int> classes;  // global class ids, head order

    std::vector<AdapterLayer<T>> layers;
    LayerNormWeights<T> final_norm;
    LinearWeights<T> pool;
    LinearWeights<T> head;

    std::vector<NamedTensor<T>> named_parameters() const;
    std::vector<Tensor<T>> parameters() const;
    std::size_t parameter_count() const;
};

// Kernels start at 0.5 * delta and gates at 0, so W'' = 0.5W + sigmoid(0)W = W
// and the new task begins exactly at the base model's function. Layernorms and
// the pool projection are copied from the base; the head is freshly drawn.
template <typename T>
TaskAdapter<T> init_adapter(const Backbone<T>& backbone, int task_id, std::vector<int> classes,
                            std::size_t kernel_size = 15, GateMode gate_mode = GateMode::learnable,
                            std::uint64_t seed = 0);

// Throws config_mismatch when the adapter was built for a different
// architecture than `backbone`.
template <typename T>
void check_compatible(const Backbone<T>& backbone, const TaskAdapter<T>& adapter);

// Weight set for the adapted task, built on the current tape: gradients flow
// into the adapter's tensors and never into the backbone's.
template <typename T>
CctWeights<T> adapted_weights(const Backbone<T>& backbone, const TaskAdapter<T>& adapter);

// An immutable, evaluation-only model for one task.
template <typename T>
class TaskModel : public TaskClassifier {
   public:
    TaskModel(ModelConfig config, CctWeights<T> weights, InputNormalization normalization, int task_id,
              std::vector<int> classes);

    // Task 1 is served by the frozen backbone itself.
    static TaskModel from_base(const Backbone<T>& backbone, int task_id = 1);

    const ModelConfig& config() const { return config_; }
    const CctWeights<T>& weights() const { return weights_; }
    const InputNormalization& normalization() const { return normalization_; }

    Tensor<T> logits(std::span<const Image> images) const;
    Tensor<T> features(std::span<const Image> images) const;

    int task_id() const override { return task_id_; }
    std::span<const int> classes() const override { return classes_; }
    std::vector<std::vector<double>> predict_proba(std::span<const Image> images) const override;

   private:
    ModelConfig config_;
    CctWeights<T> weights_;
    InputNormalization normalization_;
    int task_id_;
    std::vector<int> classes_;
};

template <typename T>
TaskModel<T> materialize(const Backbone<T>& backbone, const TaskAdapter<T>& adapter);

struct TaskParamLedger {
    std::size_t kernels = 0;
    std::size_t gates = 0;
    std::size_t layernorms = 0;
    std::size_t pool = 0;
    std::size_t head = 0;
    std::size_t total = 0;
};

TaskParamLedger count_task_params(const ModelConfig& config, std::size_t kernel_size, std::size_t classes);

}  // namespace contracon
