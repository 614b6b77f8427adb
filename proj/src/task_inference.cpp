#include "contracon/task_inference.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "contracon/error.h"

namespace contracon {

namespace {

constexpr std::size_t kChunk = 32;

std::size_t argmax(std::span<const double> p) {
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

bool use_normalization(const InferenceConfig& config, std::span<const TaskClassifier* const> models) {
    switch (config.normalize) {
        case EntropyNormalization::on: return true;
        case EntropyNormalization::off: return false;
        case EntropyNormalization::automatic: break;
    }
    for (const auto* m : models) {
        if (m->classes().size() != models.front()->classes().size()) return true;
    }
    return false;
}

}  // namespace

EntropyNormalization parse_entropy_normalization(std::string_view name) {
    if (name == "auto" || name == "automatic") return EntropyNormalization::automatic;
    if (name == "on" || name == "true") return EntropyNormalization::on;
    if (name == "off" || name == "false") return EntropyNormalization::off;
    fail(ErrorCode::config, "unknown entropy normalization '" + std::string(name) + "'");
}

std::string_view to_string(EntropyNormalization mode) {
    switch (mode) {
        case EntropyNormalization::automatic: return "auto";
        case EntropyNormalization::on: return "on";
        case EntropyNormalization::off: return "off";
    }
    return "auto";
}

void InferenceConfig::validate() const {
    if (num_augmentations < 1) fail(ErrorCode::config, "num_augmentations must be at least 1");
    if (!(beta >= 0.0 && beta <= 1.0)) fail(ErrorCode::config, "beta must be in [0,1]");
}

double entropy(std::span<const double> p, bool normalize) {
    if (p.empty()) fail(ErrorCode::data, "entropy of an empty distribution");
    double total = 0.0;
    for (double v : p) {
        if (!(v >= 0.0)) fail(ErrorCode::data, "distribution has a negative or NaN entry");
        total += v;
    }
    if (std::abs(total - 1.0) > 1e-5) {
        fail(ErrorCode::data, "distribution sums to " + std::to_string(total) + ", not 1");
    }
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) h -= v * std::log(v);
    }
    h = std::max(h, 0.0);
    if (normalize) {
        if (p.size() == 1) return 0.0;
        h /= std::log(static_cast<double>(p.size()));
    }
    return h;
}

std::vector<TaskPrediction> predict_tasks(std::span<const Image> images, std::span<const TaskClassifier* const> models,
                                          const InferenceConfig& config) {
    if (models.empty()) fail(ErrorCode::usage, "predict_task needs at least one task model");
    config.validate();
    const bool normalize = use_normalization(config, models);
    const std::size_t views_per_image = config.num_augmentations;

    std::vector<TaskPrediction> out(images.size());
    for (auto& p : out) {
        p.scores.resize(models.size());
        p.averaged.resize(models.size());
        p.original.resize(models.size());
    }

    for (std::size_t start = 0; start < images.size(); start += kChunk) {
        const std::size_t stop = std::min(images.size(), start + kChunk);
        // [original, view_1..view_V] per image, laid out contiguously.
        std::vector<Image> batch;
        batch.reserve((stop - start) * (views_per_image + 1));
        for (std::size_t i = start; i < stop; ++i) {
            batch.push_back(images[i]);
            for (auto& v : augment_views(images[i], views_per_image, config.augmentation, config.seed)) {
                batch.push_back(std::move(v));
            }
        }
        for (std::size_t m = 0; m < models.size(); ++m) {
            const auto probs = models[m]->predict_proba(batch);
            for (std::size_t i = start; i < stop; ++i) {
                const std::size_t base = (i - start) * (views_per_image + 1);
                const auto& original = probs[base];
                std::vector<double> avg(original.size(), 0.0);
                for (std::size_t v = 1; v <= views_per_image; ++v) {
                    for (std::size_t c = 0; c < avg.size(); ++c) avg[c] += probs[base + v][c];
                }
                for (double& a : avg) a /= static_cast<double>(views_per_image);
                TaskPrediction& pred = out[i];
                pred.scores[m] = config.beta * entropy(avg, normalize) + (1.0 - config.beta) * entropy(original, normalize);
                pred.averaged[m] = std::move(avg);
                pred.original[m] = original;
            }
        }
    }

    for (auto& pred : out) {
        std::size_t best = 0;
        for (std::size_t m = 1; m < models.size(); ++m) {
            const bool lower = pred.scores[m] < pred.scores[best];
            const bool tie_lower_id = pred.scores[m] == pred.scores[best] && models[m]->task_id() < models[best]->task_id();
            if (lower || tie_lower_id) best = m;
        }
        pred.chosen = best;
        pred.task_id = models[best]->task_id();
    }
    return out;
}

TaskPrediction predict_task(const Image& image, std::span<const TaskClassifier* const> models,
                            const InferenceConfig& config) {
    return predict_tasks(std::span<const Image>(&image, 1), models, config).front();
}

Classification label_from_prediction(const TaskPrediction& prediction, std::span<const TaskClassifier* const> models) {
    const TaskClassifier& model = *models[prediction.chosen];
    const std::size_t local = argmax(prediction.original[prediction.chosen]);
    return {model.task_id(), model.classes()[local]};
}

Classification classify(const Image& image, std::span<const TaskClassifier* const> models,
                        const InferenceConfig& config) {
    return label_from_prediction(predict_task(image, models, config), models);
}

Classification classify_with_task(const Image& image, const TaskClassifier& model) {
    const auto probs = model.predict_proba(std::span<const Image>(&image, 1));
    return {model.task_id(), model.classes()[argmax(probs.front())]};
}

}  // namespace contracon
