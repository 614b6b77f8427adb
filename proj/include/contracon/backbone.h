#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "contracon/classifier.h"
#include "contracon/random.h"
#include "contracon/tensor.h"

namespace contracon {

// conv(kernel, stride, padding) -> ReLU -> optional 3×3 stride-2 max-pool.
struct TokenizerStage {
    std::size_t out_channels = 256;
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 3;
    bool pooling = true;

    bool operator==(const TokenizerStage&) const = default;
};

struct ImageShape {
    std::size_t channels = 3;
    std::size_t height = 32;
    std::size_t width = 32;

    bool operator==(const ImageShape&) const = default;
};

struct ModelConfig {
    std::size_t embed_dim = 256;
    std::size_t layers = 6;
    std::size_t heads = 4;
    double ffn_ratio = 2.0;
    std::vector<TokenizerStage> tokenizer{TokenizerStage{}};
    double attn_dropout = 0.1;
    double stochastic_depth = 0.1;
    ImageShape image{};
    std::size_t classes_first_task = 10;
    double layer_norm_eps = 1e-5;

    std::size_t head_dim() const { return embed_dim / heads; }
    std::size_t ffn_hidden() const;
    // Spatial grid after every tokenizer stage, by closed-form window arithmetic.
    std::pair<std::size_t, std::size_t> token_grid() const;
    std::size_t token_count() const;
    // Throws a configuration error naming the first violated constraint.
    void validate() const;

    // 6 layers / 4 heads / d=256, one 3×3 stride-2 pad-3 tokenizer stage, 32×32 RGB.
    static ModelConfig cifar();
    // d=64, L=2, H=2 on 16×16 grayscale; the desk-scale continual profile.
    static ModelConfig tiny();

    bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerNormWeights {
    Tensor<T> gamma;
    Tensor<T> beta;
};

template <typename T>
struct LinearWeights {
    Tensor<T> weight;  // [in×out]
    Tensor<T> bias;    // [out]
};

template <typename T>
struct ConvWeights {
    Tensor<T> weight;  // [out×in×k×k]
    Tensor<T> bias;    // [out]
};

// Per-head projections are kept as separate d×d_k matrices so each can be
// convolved independently by a task adapter.
template <typename T>
struct AttentionWeights {
    std::vector<Tensor<T>> query;
    std::vector<Tensor<T>> key;
    std::vector<Tensor<T>> value;
    LinearWeights<T> out;  // [d×d]
};

template <typename T>
struct EncoderLayerWeights {
    LayerNormWeights<T> norm1;
    AttentionWeights<T> attention;
    LayerNormWeights<T> norm2;
    LinearWeights<T> fc1;
    LinearWeights<T> fc2;
};

// The complete tensor set a CCT forward pass reads. The base backbone owns
// one; task models assemble another from shared base tensors plus their own.
template <typename T>
struct CctWeights {
    std::vector<ConvWeights<T>> tokenizer;
    Tensor<T> positional;  // [n×d], constant
    std::vector<EncoderLayerWeights<T>> layers;
    LayerNormWeights<T> final_norm;
    LinearWeights<T> pool;  // [d×1] + [1]
    LinearWeights<T> head;  // [d×C] + [C]
};

// Trainable tensors in a fixed order (positional embedding excluded).
template <typename T>
std::vector<NamedTensor<T>> named_tensors(const CctWeights<T>& w);

template <typename T>
struct ForwardContext {
    bool training = false;
    Rng* rng = nullptr;
    // When set, every attention-weight tensor ([B×n×n]) is appended here.
    std::vector<Tensor<T>>* attention_maps = nullptr;
};

template <typename T>
Tensor<T> sinusoidal_pos_embed(std::size_t tokens, std::size_t dim);

// [B×C×H×W] -> [B×n×d] including the positional embedding.
template <typename T>
Tensor<T> tokenize(const CctWeights<T>& w, const ModelConfig& config, const Tensor<T>& images);

// Single head of scaled dot-product attention on [n×d] or [B×n×d].
template <typename T>
Tensor<T> attention_head(const Tensor<T>& z, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
                         double attn_dropout, ForwardContext<T>& ctx);

template <typename T>
Tensor<T> mhsa(const Tensor<T>& z, const AttentionWeights<T>& w, double attn_dropout, ForwardContext<T>& ctx);

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& z, const EncoderLayerWeights<T>& w, const ModelConfig& config,
                        ForwardContext<T>& ctx);

// softmax(z·pool) over tokens, then the weighted sum of tokens. [n×d] -> [d],
// [B×n×d] -> [B×d].
template <typename T>
Tensor<T> sequence_pool(const Tensor<T>& z, const LinearWeights<T>& pool);

// Tokenizer, encoder stack, final layernorm, sequence pool: [B×d].
template <typename T>
Tensor<T> pooled_features(const CctWeights<T>& w, const ModelConfig& config, const Tensor<T>& images,
                          ForwardContext<T>& ctx);

template <typename T>
Tensor<T> forward_logits(const CctWeights<T>& w, const ModelConfig& config, const Tensor<T>& images,
                         ForwardContext<T>& ctx, std::optional<std::size_t> expected_classes = std::nullopt);

// Standardizes [0,1] images into a [B×C×H×W] model input.
template <typename T>
Tensor<T> images_to_batch(std::span<const Image> images, const InputNormalization& norm);

// The first-task model. Trained in full on task 1, then frozen; every later
// task is expressed relative to these tensors.
template <typename T>
class Backbone {
   public:
    Backbone(ModelConfig config, std::uint64_t seed);
    Backbone(ModelConfig config, CctWeights<T> weights, InputNormalization normalization, std::vector<int> classes);

    const ModelConfig& config() const { return config_; }
    const CctWeights<T>& weights() const { return weights_; }
    std::vector<NamedTensor<T>> named_parameters() const { return named_tensors(weights_); }
    std::vector<Tensor<T>> parameters() const;

    const InputNormalization& normalization() const { return normalization_; }
    void set_normalization(InputNormalization norm);
    // Global class ids of task 1, in head order.
    const std::vector<int>& classes() const { return classes_; }
    void set_classes(std::vector<int> classes);

    // Drops requires_grad on every tensor and records the content digest.
    void freeze();
    bool frozen() const { return frozen_; }
    std::uint64_t digest() const;
    std::uint64_t frozen_digest() const { return frozen_digest_; }

   private:
    void require_unfrozen(const char* what) const;

    ModelConfig config_;
    CctWeights<T> weights_;
    InputNormalization normalization_;
    std::vector<int> classes_;
    bool frozen_ = false;
    std::uint64_t frozen_digest_ = 0;
};

// Builds a zero-valued weight set with the shapes `config` implies.
template <typename T>
CctWeights<T> allocate_weights(const ModelConfig& config, std::size_t head_classes);

}  // namespace contracon
