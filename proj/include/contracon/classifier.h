#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace contracon {

// Channel-major C×H×W image with values in [0,1].
struct Image {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;

    Image() = default;
    Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
        : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

    float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
    std::size_t size() const { return pixels.size(); }
    bool operator==(const Image&) const = default;
};

// Per-channel standardization applied to [0,1] images before the model.
struct InputNormalization {
    std::vector<float> mean;
    std::vector<float> stddev;

    static InputNormalization identity(std::size_t channels) {
        return {std::vector<float>(channels, 0.0f), std::vector<float>(channels, 1.0f)};
    }
};

// A per-task predictor as seen by task-identity inference: anything that maps
// images to a distribution over its task's classes.
class TaskClassifier {
   public:
    virtual ~TaskClassifier() = default;

    virtual int task_id() const = 0;
    // Global class ids, indexed by local head output.
    virtual std::span<const int> classes() const = 0;
    // One probability row per image. Must be deterministic and thread-safe.
    virtual std::vector<std::vector<double>> predict_proba(std::span<const Image> images) const = 0;
};

}  // namespace contracon
