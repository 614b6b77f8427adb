#include "testkit.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "contracon/augment.h"
#include "contracon/backbone.h"
#include "contracon/grad_check.h"
#include "contracon/ops.h"
#include "contracon/random.h"
#include "contracon/task_inference.h"

using namespace contracon;

namespace testkit {

std::vector<double> conv_same_oracle(const std::vector<double>& input, std::size_t rows, std::size_t cols,
                                     const std::vector<double>& kernel, std::size_t k) {
    const long half = static_cast<long>(k / 2);
    std::vector<double> out(rows * cols, 0.0);
    for (long i = 0; i < static_cast<long>(rows); ++i) {
        for (long j = 0; j < static_cast<long>(cols); ++j) {
            double acc = 0.0;
            for (long u = 0; u < static_cast<long>(k); ++u) {
                for (long v = 0; v < static_cast<long>(k); ++v) {
                    const long r = i + u - half, c = j + v - half;
                    if (r < 0 || c < 0 || r >= static_cast<long>(rows) || c >= static_cast<long>(cols)) continue;
                    acc += kernel[u * k + v] * input[r * cols + c];
                }
            }
            out[i * cols + j] = acc;
        }
    }
    return out;
}

namespace {

// At 1e-3 the difference quotient's own truncation error reaches ~1e-4 on
// curved ops; 1e-5 keeps it near 1e-10 and stays clear of relu/max-pool switches.
constexpr double kEps = 1e-5;

Tensor<double> rand_tensor(Rng& rng, Shape shape, double scale = 1.0, bool grad = true) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal(0.0, scale);
    return Tensor<double>(std::move(shape), std::move(v), grad);
}

// Values bounded away from zero, for kinked functions.
Tensor<double> rand_away_from_zero(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 2.0);
    return Tensor<double>(std::move(shape), std::move(v), true);
}

// Distinct values spaced well beyond the difference step, for max-pooling.
Tensor<double> rand_distinct(Rng& rng, Shape shape) {
    std::vector<double> v(shape_numel(shape));
    std::vector<std::size_t> perm(v.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(perm[i]) - 1.0;
    return Tensor<double>(std::move(shape), std::move(v), true);
}

// Scalar projection of an op output onto a fixed random direction.
Tensor<double> project(const Tensor<double>& y, const Tensor<double>& r) { return sum(mul(y, r)); }

struct Runner {
    std::vector<OpGradResult> results;
    void run(const std::string& op, std::size_t cases, double tol, const std::function<GradCheckReport(Rng&)>& one,
             Rng& rng) {
        OpGradResult r{op, cases, 0.0, tol};
        for (std::size_t c = 0; c < cases; ++c) r.worst = std::max(r.worst, one(rng).max_relative_error);
        results.push_back(r);
    }
};

}  // namespace

ModelConfig micro_config() {
    ModelConfig c;
    c.embed_dim = 8;
    c.layers = 1;
    c.heads = 2;
    c.ffn_ratio = 2.0;
    c.tokenizer = {TokenizerStage{8, 3, 2, 1, true}};
    c.attn_dropout = 0.0;
    c.stochastic_depth = 0.0;
    c.image = {1, 8, 8};
    c.classes_first_task = 3;
    return c;
}

std::vector<OpGradResult> gradient_suite(std::size_t cases, std::uint64_t seed) {
    Rng rng(seed);
    Runner run;
    const double tol = 1e-4;

    run.run("matmul", cases, tol, [](Rng& g) {
        auto a = rand_tensor(g, {3, 4}), b = rand_tensor(g, {4, 2}), r = rand_tensor(g, {3, 2}, 1.0, false);
        return grad_check([&] { return project(matmul(a, b), r); }, {a, b}, kEps, 1e-4);
    }, rng);
    run.run("matmul_batched", cases, tol, [](Rng& g) {
        auto a = rand_tensor(g, {2, 3, 4}), b = rand_tensor(g, {2, 4, 2}), r = rand_tensor(g, {2, 3, 2}, 1.0, false);
        return grad_check([&] { return project(matmul(a, b), r); }, {a, b}, kEps, 1e-4);
    }, rng);
    run.run("conv2d_same", cases, tol, [](Rng& g) {
        const std::size_t k = 1 + 2 * g.uniform_index(3);
        auto w = rand_tensor(g, {4, 5}), f = rand_tensor(g, {k, k}), r = rand_tensor(g, {4, 5}, 1.0, false);
        return grad_check([&] { return project(conv2d_same(w, f), r); }, {w, f}, kEps, 1e-4);
    }, rng);
    run.run("softmax", cases, tol, [](Rng& g) {
        auto x = rand_tensor(g, {3, 5}), r = rand_tensor(g, {3, 5}, 1.0, false);
        return grad_check([&] { return project(softmax(x), r); }, {x}, kEps, 1e-4);
    }, rng);
    run.run("layer_norm", cases, tol, [](Rng& g) {
        auto x = rand_tensor(g, {4, 8}), gm = rand_tensor(g, {8}), bt = rand_tensor(g, {8}),
             r = rand_tensor(g, {4, 8}, 1.0, false);
        return grad_check([&] { return project(layer_norm(x, gm, bt, 1e-5), r); }, {x, gm, bt}, kEps, 1e-4);
    }, rng);
    for (Activation act : {Activation::gelu, Activation::sigmoid, Activation::relu}) {
        const std::string name = act == Activation::gelu ? "gelu" : act == Activation::sigmoid ? "sigmoid" : "relu";
        run.run(name, cases, tol, [act](Rng& g) {
            auto x = rand_away_from_zero(g, {3, 4});
            auto r = rand_tensor(g, {3, 4}, 1.0, false);
            return grad_check([&] { return project(activation(x, act), r); }, {x}, kEps, 1e-4);
        }, rng);
    }
    run.run("cross_entropy", cases, tol, [](Rng& g) {
        auto x = rand_tensor(g, {4, 10});
        std::vector<int> labels(4);
        for (int& l : labels) l = static_cast<int>(g.uniform_index(10));
        return grad_check([&] { return cross_entropy(x, std::span<const int>(labels)); }, {x}, kEps, 1e-4);
    }, rng);
    run.run("adapt_weight", cases, tol, [](Rng& g) {
        auto w = rand_tensor(g, {4, 3}, 1.0, false), f = rand_tensor(g, {3, 3}), a = rand_tensor(g, {1}),
             r = rand_tensor(g, {4, 3}, 1.0, false);
        return grad_check([&] { return project(adapt_weight(w, f, a, GateMode::learnable), r); }, {f, a}, kEps, 1e-4);
    }, rng);
    run.run("conv2d", cases, tol, [](Rng& g) {
        auto x = rand_tensor(g, {2, 2, 5, 5}), w = rand_tensor(g, {3, 2, 3, 3}), b = rand_tensor(g, {3}),
             r = rand_tensor(g, {2, 3, 3, 3}, 1.0, false);
        return grad_check([&] { return project(conv2d(x, w, b, 2, 1), r); }, {x, w, b}, kEps, 1e-4);
    }, rng);
    run.run("max_pool2d", cases, tol, [](Rng& g) {
        auto x = rand_distinct(g, {1, 2, 6, 6});
        auto r = rand_tensor(g, {1, 2, 3, 3}, 1.0, false);
        return grad_check([&] { return project(max_pool2d(x, 3, 2, 1), r); }, {x}, kEps, 1e-4);
    }, rng);
    run.run("sequence_pool", cases, tol, [](Rng& g) {
        auto z = rand_tensor(g, {2, 4, 6});
        LinearWeights<double> pool{rand_tensor(g, {6, 1}), rand_tensor(g, {1})};
        auto r = rand_tensor(g, {2, 6}, 1.0, false);
        return grad_check([&] { return project(sequence_pool(z, pool), r); }, {z, pool.weight, pool.bias}, kEps,
                          1e-4);
    }, rng);

    // End to end: every base tensor of the micro model through the loss.
    const ModelConfig cfg = micro_config();
    run.run("tiny_model", cases, 1e-3, [&cfg](Rng& g) {
        Backbone<double> bb(cfg, g.next());
        // Larger weights than the 0.02 init so every path carries signal.
        std::vector<Tensor<double>> params = bb.parameters();
        for (auto& p : params)
            for (double& v : p.data()) v = g.normal(0.0, 0.3);
        std::vector<Image> images(2, Image(1, 8, 8));
        for (auto& im : images)
            for (float& p : im.pixels) p = static_cast<float>(g.uniform());
        const Tensor<double> x = images_to_batch<double>(images, InputNormalization::identity(1));
        std::vector<int> labels{static_cast<int>(g.uniform_index(3)), static_cast<int>(g.uniform_index(3))};
        return grad_check(
            [&] {
                ForwardContext<double> ctx;
                return cross_entropy(forward_logits(bb.weights(), cfg, x, ctx), std::span<const int>(labels));
            },
            params, kEps, 1e-3);
    }, rng);
    return run.results;
}

namespace {

// Exact images are looked up by value; the battery never relies on two
// different views being numerically equal.
struct ViewKey {
    std::size_t task = 0;
    int view = -1;  // -1: the unaugmented image
    int label = 0;
};

}  // namespace

BatteryResult inference_battery(bool adversarial, std::size_t images_per_task, std::uint64_t seed) {
    constexpr std::size_t kTasks = 5;
    Rng rng(seed);
    InferenceConfig base_cfg;
    base_cfg.seed = seed;

    std::map<std::vector<float>, ViewKey> table;
    struct Sample {
        Image image;
        std::size_t task;
        int label;
    };
    std::vector<Sample> samples;
    for (std::size_t t = 0; t < kTasks; ++t) {
        for (std::size_t i = 0; i < images_per_task; ++i) {
            Image im(1, 8, 8);
            for (float& p : im.pixels) p = static_cast<float>(rng.uniform(0.1, 0.9));
            const int label = static_cast<int>(rng.uniform_index(2));
            table[im.pixels] = {t, -1, label};
            const auto views = augment_views(im, base_cfg.num_augmentations, base_cfg.augmentation, base_cfg.seed);
            for (std::size_t v = 0; v < views.size(); ++v) table.emplace(views[v].pixels, ViewKey{t, static_cast<int>(v), label});
            samples.push_back({im, t, label});
        }
    }

    auto two = [](int winner, double p) {
        return winner == 0 ? std::vector<double>{p, 1.0 - p} : std::vector<double>{1.0 - p, p};
    };
    std::vector<ScriptedModel> models;
    for (std::size_t m = 0; m < kTasks; ++m) {
        std::vector<int> classes{static_cast<int>(2 * m), static_cast<int>(2 * m + 1)};
        models.emplace_back(static_cast<int>(m + 1), classes, [=, &table](const Image& im) {
            const ViewKey key = table.at(im.pixels);
            if (key.task == m) return two(key.label, 0.8);
            if (key.view < 0) return two(0, adversarial ? 0.97 : 0.6);
            return two(key.view % 2, 0.97);
        });
    }
    std::vector<const TaskClassifier*> handles;
    for (const auto& m : models) handles.push_back(&m);

    std::vector<Image> images;
    for (const auto& s : samples) images.push_back(s.image);
    InferenceConfig b1 = base_cfg, b0 = base_cfg;
    b1.beta = 1.0;
    b0.beta = 0.0;
    const auto p1 = predict_tasks(images, handles, b1);
    const auto p0 = predict_tasks(images, handles, b0);
    const auto pd = predict_tasks(images, handles, base_cfg);

    BatteryResult r;
    r.images = samples.size();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const int truth = static_cast<int>(samples[i].task + 1);
        if (p1[i].task_id == truth) {
            ++r.correct_beta1;
            const Classification cil = label_from_prediction(p1[i], handles);
            const Classification til = classify_with_task(samples[i].image, *handles[samples[i].task]);
            if (cil.label == til.label) ++r.label_agreement;
        }
        if (p0[i].task_id == truth) ++r.correct_beta0;
        if (pd[i].task_id == truth) ++r.task_correct_default;
    }
    return r;
}

}  // namespace testkit
