#include "contracon/backbone.h"

#include <cmath>
#include <string>

#include "contracon/error.h"
#include "contracon/ops.h"

namespace contracon {

std::size_t ModelConfig::ffn_hidden() const {
    return static_cast<std::size_t>(std::llround(ffn_ratio * static_cast<double>(embed_dim)));
}

std::pair<std::size_t, std::size_t> ModelConfig::token_grid() const {
    std::size_t h = image.height, w = image.width;
    for (const auto& stage : tokenizer) {
        h = window_output_extent(h, stage.kernel, stage.stride, stage.padding);
        w = window_output_extent(w, stage.kernel, stage.stride, stage.padding);
        if (stage.pooling) {
            h = window_output_extent(h, 3, 2, 1);
            w = window_output_extent(w, 3, 2, 1);
        }
        if (h == 0 || w == 0) return {0, 0};
    }
    return {h, w};
}

std::size_t ModelConfig::token_count() const {
    auto [h, w] = token_grid();
    return h * w;
}

void ModelConfig::validate() const {
    auto bad = [](const std::string& what) { fail(ErrorCode::config, what); };
    if (embed_dim == 0 || heads == 0) bad("embed_dim and heads must be positive");
    if (embed_dim % heads != 0) {
        bad("embed_dim " + std::to_string(embed_dim) + " not divisible by heads " + std::to_string(heads));
    }
    if (embed_dim % 2 != 0) bad("embed_dim must be even for sinusoidal positional embeddings");
    if (!(attn_dropout >= 0.0 && attn_dropout < 1.0)) bad("attn_dropout must be in [0,1)");
    if (!(stochastic_depth >= 0.0 && stochastic_depth < 1.0)) bad("stochastic_depth must be in [0,1)");
    if (ffn_ratio <= 0.0 || ffn_hidden() == 0) bad("ffn_ratio must be positive");
    if (tokenizer.empty()) bad("tokenizer needs at least one stage");
    for (const auto& s : tokenizer) {
        if (s.out_channels == 0 || s.kernel == 0 || s.stride == 0) bad("tokenizer stage has a zero extent");
    }
    if (tokenizer.back().out_channels != embed_dim) {
        bad("last tokenizer stage must output embed_dim channels");
    }
    if (image.channels == 0 || image.height == 0 || image.width == 0) bad("image dimensions must be positive");
    if (token_count() == 0) bad("tokenizer collapses the spatial extent to zero");
    if (classes_first_task == 0) bad("classes_first_task must be positive");
    if (layer_norm_eps < 0.0) bad("layer_norm_eps must be non-negative");
}

ModelConfig ModelConfig::cifar() { return ModelConfig{}; }

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.embed_dim = 64;
    c.layers = 2;
    c.heads = 2;
    c.tokenizer = {TokenizerStage{64, 3, 2, 3, true}};
    c.image = {1, 16, 16};
    c.classes_first_task = 2;
    return c;
}

template <typename T>
std::vector<NamedTensor<T>> named_tensors(const CctWeights<T>& w) {
    std::vector<NamedTensor<T>> out;
    for (std::size_t i = 0; i < w.tokenizer.size(); ++i) {
        const std::string p = "tokenizer." + std::to_string(i) + ".";
        out.push_back({p + "weight", w.tokenizer[i].weight});
        out.push_back({p + "bias", w.tokenizer[i].bias});
    }
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& layer = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        out.push_back({p + "norm1.gamma", layer.norm1.gamma});
        out.push_back({p + "norm1.beta", layer.norm1.beta});
        for (std::size_t h = 0; h < layer.attention.query.size(); ++h) {
            const std::string hs = "." + std::to_string(h);
            out.push_back({p + "attn.query" + hs, layer.attention.query[h]});
            out.push_back({p + "attn.key" + hs, layer.attention.key[h]});
            out.push_back({p + "attn.value" + hs, layer.attention.value[h]});
        }
        out.push_back({p + "attn.out.weight", layer.attention.out.weight});
        out.push_back({p + "attn.out.bias", layer.attention.out.bias});
        out.push_back({p + "norm2.gamma", layer.norm2.gamma});
        out.push_back({p + "norm2.beta", layer.norm2.beta});
        out.push_back({p + "ffn.fc1.weight", layer.fc1.weight});
        out.push_back({p + "ffn.fc1.bias", layer.fc1.bias});
        out.push_back({p + "ffn.fc2.weight", layer.fc2.weight});
        out.push_back({p + "ffn.fc2.bias", layer.fc2.bias});
    }
    out.push_back({"final_norm.gamma", w.final_norm.gamma});
    out.push_back({"final_norm.beta", w.final_norm.beta});
    out.push_back({"pool.weight", w.pool.weight});
    out.push_back({"pool.bias", w.pool.bias});
    out.push_back({"head.weight", w.head.weight});
    out.push_back({"head.bias", w.head.bias});
    return out;
}

template <typename T>
Tensor<T> sinusoidal_pos_embed(std::size_t tokens, std::size_t dim) {
    if (dim == 0 || dim % 2 != 0) {
        fail(ErrorCode::config, "sinusoidal embedding needs an even dimension, got " + std::to_string(dim));
    }
    if (tokens == 0) fail(ErrorCode::config, "sinusoidal embedding needs at least one token");
    std::vector<T> pe(tokens * dim);
    for (std::size_t p = 0; p < tokens; ++p) {
        for (std::size_t i = 0; i < dim / 2; ++i) {
            const double angle =
                static_cast<double>(p) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
            pe[p * dim + 2 * i] = static_cast<T>(std::sin(angle));
            pe[p * dim + 2 * i + 1] = static_cast<T>(std::cos(angle));
        }
    }
    return Tensor<T>({tokens, dim}, std::move(pe));
}

template <typename T>
Tensor<T> tokenize(const CctWeights<T>& w, const ModelConfig& config, const Tensor<T>& images) {
    const ImageShape& im = config.image;
    if (images.rank() != 4 || images.dim(1) != im.channels || images.dim(2) != im.height || images.dim(3) != im.width) {
        fail(ErrorCode::shape, "tokenize: images " + shape_to_string(images.shape()) + " do not match configured " +
                                   shape_to_string({im.channels, im.height, im.width}));
    }
    Tensor<T> x = images;
    for (std::size_t i = 0; i < config.tokenizer.size(); ++i) {
        const auto& stage = config.tokenizer[i];
        x = relu(conv2d(x, w.tokenizer[i].weight, w.tokenizer[i].bias, stage.stride, stage.padding));
        if (stage.pooling) x = max_pool2d(x, 3, 2, 1);
    }
    const std::size_t batch = x.dim(0), channels = x.dim(1), n = x.dim(2) * x.dim(3);
    Tensor<T> tokens = transpose(reshape(x, {batch, channels, n}));
    return add(tokens, w.positional);
}

template <typename T>
Tensor<T> attention_head(const Tensor<T>& z, const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& wv,
                         double attn_dropout, ForwardContext<T>& ctx) {
    if (z.rank() == 2) {
        Tensor<T> out = attention_head(reshape(z, {1, z.dim(0), z.dim(1)}), wq, wk, wv, attn_dropout, ctx);
        return reshape(out, {out.dim(1), out.dim(2)});
    }
    Tensor<T> q = matmul(z, wq);
    Tensor<T> k = matmul(z, wk);
    Tensor<T> v = matmul(z, wv);
    const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(wq.dim(1)));
    Tensor<T> weights = softmax(scale(matmul(q, transpose(k)), inv_sqrt_dk), -1);
    if (ctx.attention_maps) ctx.attention_maps->push_back(weights);
    if (ctx.training && attn_dropout > 0.0) weights = dropout(weights, attn_dropout, *ctx.rng);
    return matmul(weights, v);
}

template <typename T>
Tensor<T> mhsa(const Tensor<T>& z, const AttentionWeights<T>& w, double attn_dropout, ForwardContext<T>& ctx) {
    std::vector<Tensor<T>> heads;
    heads.reserve(w.query.size());
    for (std::size_t h = 0; h < w.query.size(); ++h) {
        heads.push_back(attention_head(z, w.query[h], w.key[h], w.value[h], attn_dropout, ctx));
    }
    Tensor<T> joined = heads.size() == 1 ? heads[0] : concat_last(std::span<const Tensor<T>>(heads));
    return add(matmul(joined, w.out.weight), w.out.bias);
}

template <typename T>
Tensor<T> encoder_layer(const Tensor<T>& z, const EncoderLayerWeights<T>& w, const ModelConfig& config,
                        ForwardContext<T>& ctx) {
    if (z.rank() == 2) {
        Tensor<T> out = encoder_layer(reshape(z, {1, z.dim(0), z.dim(1)}), w, config, ctx);
        return reshape(out, {out.dim(1), out.dim(2)});
    }
    const double eps = config.layer_norm_eps;
    const bool drop = ctx.training && config.stochastic_depth > 0.0;
    Tensor<T> branch = mhsa(layer_norm(z, w.norm1.gamma, w.norm1.beta, eps), w.attention, ctx.training ? config.attn_dropout : 0.0, ctx);
    if (drop) branch = drop_path(branch, config.stochastic_depth, *ctx.rng);
    Tensor<T> u = add(z, branch);
    Tensor<T> hidden = gelu(add(matmul(layer_norm(u, w.norm2.gamma, w.norm2.beta, eps), w.fc1.weight), w.fc1.bias));
    Tensor<T> ffn = add(matmul(hidden, w.fc2.weight), w.fc2.bias);
    if (drop) ffn = drop_path(ffn, config.stochastic_depth, *ctx.rng);
    return add(u, ffn);
}

template <typename T>
Tensor<T> sequence_pool(const Tensor<T>& z, const LinearWeights<T>& pool) {
    if (z.rank() == 2) {
        Tensor<T> out = sequence_pool(reshape(z, {1, z.dim(0), z.dim(1)}), pool);
        return reshape(out, {out.dim(1)});
    }
    const std::size_t batch = z.dim(0), d = z.dim(2);
    Tensor<T> scores = add(matmul(z, pool.weight), pool.bias);  // [B×n×1]
    Tensor<T> weights = softmax(scores, 1);
    return reshape(matmul(transpose(weights), z), {batch, d});
}

template <typename T>
Tensor<T> pooled_features(const CctWeights<T>& w, const ModelConfig& config, const Tensor<T>& images,
                          ForwardContext<T>& ctx) {
    if (ctx.training && (config.attn_dropout > 0.0 || config.stochastic_depth > 0.0) && !ctx.rng) {
        fail(ErrorCode::usage, "training-mode forward needs an rng");
    }
    Tensor<T> z = tokenize(w, config, images);
    for (const auto& layer : w.layers) z = encoder_layer(z, layer, config, ctx);
    z = layer_norm(z, w.final_norm.gamma, w.final_norm.beta, config.layer_norm_eps);
    return sequence_pool(z, w.pool);
}

template <typename T>
Tensor<T> forward_logits(const CctWeights<T>& w, const ModelConfig& config, const Tensor<T>& images,
                         ForwardContext<T>& ctx, std::optional<std::size_t> expected_classes) {
    const std::size_t head_classes = w.head.weight.dim(1);
    if (expected_classes && *expected_classes != head_classes) {
        fail(ErrorCode::config, "head has " + std::to_string(head_classes) + " classes but task needs " +
                                    std::to_string(*expected_classes));
    }
    return add(matmul(pooled_features(w, config, images, ctx), w.head.weight), w.head.bias);
}

template <typename T>
Tensor<T> images_to_batch(std::span<const Image> images, const InputNormalization& norm) {
    if (images.empty()) fail(ErrorCode::data, "empty image batch");
    const std::size_t c = images[0].channels, h = images[0].height, w = images[0].width;
    if (norm.mean.size() != c || norm.stddev.size() != c) {
        fail(ErrorCode::config, "normalization has " + std::to_string(norm.mean.size()) + " channels, images have " +
                                    std::to_string(c));
    }
    const std::size_t plane = h * w;
    std::vector<T> data(images.size() * c * plane);
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& im = images[i];
        if (im.channels != c || im.height != h || im.width != w) fail(ErrorCode::data, "images in a batch differ in size");
        for (std::size_t ch = 0; ch < c; ++ch) {
            const float m = norm.mean[ch], s = norm.stddev[ch];
            for (std::size_t p = 0; p < plane; ++p) {
                data[(i * c + ch) * plane + p] = static_cast<T>((im.pixels[ch * plane + p] - m) / s);
            }
        }
    }
    return Tensor<T>({images.size(), c, h, w}, std::move(data));
}

template <typename T>
CctWeights<T> allocate_weights(const ModelConfig& config, std::size_t head_classes) {
    config.validate();
    const std::size_t d = config.embed_dim, dk = config.head_dim(), hidden = config.ffn_hidden();
    CctWeights<T> w;
    std::size_t in_channels = config.image.channels;
    for (const auto& stage : config.tokenizer) {
        w.tokenizer.push_back({Tensor<T>::zeros({stage.out_channels, in_channels, stage.kernel, stage.kernel}, true),
                               Tensor<T>::zeros({stage.out_channels}, true)});
        in_channels = stage.out_channels;
    }
    w.positional = sinusoidal_pos_embed<T>(config.token_count(), d);
    auto layer_norm_weights = [d] {
        return LayerNormWeights<T>{Tensor<T>::full({d}, T(1), true), Tensor<T>::zeros({d}, true)};
    };
    for (std::size_t l = 0; l < config.layers; ++l) {
        EncoderLayerWeights<T> layer;
        layer.norm1 = layer_norm_weights();
        layer.norm2 = layer_norm_weights();
        for (std::size_t h = 0; h < config.heads; ++h) {
            layer.attention.query.push_back(Tensor<T>::zeros({d, dk}, true));
            layer.attention.key.push_back(Tensor<T>::zeros({d, dk}, true));
            layer.attention.value.push_back(Tensor<T>::zeros({d, dk}, true));
        }
        layer.attention.out = {Tensor<T>::zeros({d, d}, true), Tensor<T>::zeros({d}, true)};
        layer.fc1 = {Tensor<T>::zeros({d, hidden}, true), Tensor<T>::zeros({hidden}, true)};
        layer.fc2 = {Tensor<T>::zeros({hidden, d}, true), Tensor<T>::zeros({d}, true)};
        w.layers.push_back(std::move(layer));
    }
    w.final_norm = layer_norm_weights();
    w.pool = {Tensor<T>::zeros({d, 1}, true), Tensor<T>::zeros({1}, true)};
    w.head = {Tensor<T>::zeros({d, head_classes}, true), Tensor<T>::zeros({head_classes}, true)};
    return w;
}

namespace {

template <typename T>
void fill_truncated_normal(Tensor<T>& t, Rng& rng, double stddev) {
    for (T& v : t.data()) v = static_cast<T>(rng.truncated_normal(stddev));
}

}  // namespace

template <typename T>
Backbone<T>::Backbone(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      weights_(allocate_weights<T>(config_, config_.classes_first_task)),
      normalization_(InputNormalization::identity(config_.image.channels)) {
    Rng rng(seed);
    for (auto& conv : weights_.tokenizer) {
        const auto& s = conv.weight.shape();
        const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
        const double std = std::sqrt(2.0 / fan_in);
        for (T& v : conv.weight.data()) v = static_cast<T>(rng.normal(0.0, std));
    }
    for (auto& layer : weights_.layers) {
        for (auto* heads : {&layer.attention.query, &layer.attention.key, &layer.attention.value}) {
            for (auto& m : *heads) fill_truncated_normal(m, rng, 0.02);
        }
        fill_truncated_normal(layer.attention.out.weight, rng, 0.02);
        fill_truncated_normal(layer.fc1.weight, rng, 0.02);
        fill_truncated_normal(layer.fc2.weight, rng, 0.02);
    }
    fill_truncated_normal(weights_.pool.weight, rng, 0.02);
    fill_truncated_normal(weights_.head.weight, rng, 0.02);
    for (std::size_t c = 0; c < config_.classes_first_task; ++c) classes_.push_back(static_cast<int>(c));
}

template <typename T>
Backbone<T>::Backbone(ModelConfig config, CctWeights<T> weights, InputNormalization normalization,
                      std::vector<int> classes)
    : config_(std::move(config)),
      weights_(std::move(weights)),
      normalization_(std::move(normalization)),
      classes_(std::move(classes)) {
    config_.validate();
    if (normalization_.mean.size() != config_.image.channels) {
        fail(ErrorCode::config, "normalization channel count does not match the image config");
    }
}

template <typename T>
std::vector<Tensor<T>> Backbone<T>::parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& nt : named_tensors(weights_)) out.push_back(nt.tensor);
    return out;
}

template <typename T>
void Backbone<T>::require_unfrozen(const char* what) const {
    if (frozen_) fail(ErrorCode::usage, std::string(what) + ": backbone is frozen");
}

template <typename T>
void Backbone<T>::set_normalization(InputNormalization norm) {
    require_unfrozen("set_normalization");
    if (norm.mean.size() != config_.image.channels || norm.stddev.size() != config_.image.channels) {
        fail(ErrorCode::config, "normalization channel count does not match the image config");
    }
    normalization_ = std::move(norm);
}

template <typename T>
void Backbone<T>::set_classes(std::vector<int> classes) {
    require_unfrozen("set_classes");
    if (classes.size() != config_.classes_first_task) {
        fail(ErrorCode::config, "class list size does not match the head");
    }
    classes_ = std::move(classes);
}

template <typename T>
void Backbone<T>::freeze() {
    for (auto& t : parameters()) {
        t.set_requires_grad(false);
        t.zero_grad();
    }
    frozen_ = true;
    frozen_digest_ = digest();
}

template <typename T>
std::uint64_t Backbone<T>::digest() const {
    auto named = named_parameters();
    std::vector<NamedTensor<T>> all(named.begin(), named.end());
    all.push_back({"positional", weights_.positional});
    return content_digest(std::span<const NamedTensor<T>>(all));
}

#define CONTRACON_INSTANTIATE_BACKBONE(T)                                                                         \
    template std::vector<NamedTensor<T>> named_tensors(const CctWeights<T>&);                                     \
    template Tensor<T> sinusoidal_pos_embed<T>(std::size_t, std::size_t);                                          \
    template Tensor<T> tokenize(const CctWeights<T>&, const ModelConfig&, const Tensor<T>&);                      \
    template Tensor<T> attention_head(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                      double, ForwardContext<T>&);                                                 \
    template Tensor<T> mhsa(const Tensor<T>&, const AttentionWeights<T>&, double, ForwardContext<T>&);            \
    template Tensor<T> encoder_layer(const Tensor<T>&, const EncoderLayerWeights<T>&, const ModelConfig&,         \
                                     ForwardContext<T>&);                                                          \
    template Tensor<T> sequence_pool(const Tensor<T>&, const LinearWeights<T>&);                                  \
    template Tensor<T> pooled_features(const CctWeights<T>&, const ModelConfig&, const Tensor<T>&,                \
                                       ForwardContext<T>&);                                                        \
    template Tensor<T> forward_logits(const CctWeights<T>&, const ModelConfig&, const Tensor<T>&,                 \
                                      ForwardContext<T>&, std::optional<std::size_t>);                            \
    template Tensor<T> images_to_batch<T>(std::span<const Image>, const InputNormalization&);                     \
    template CctWeights<T> allocate_weights<T>(const ModelConfig&, std::size_t);                                  \
    template class Backbone<T>;

CONTRACON_INSTANTIATE_BACKBONE(float)
CONTRACON_INSTANTIATE_BACKBONE(double)

#undef CONTRACON_INSTANTIATE_BACKBONE

}  // namespace contracon
