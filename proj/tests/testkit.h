#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "contracon/adapter.h"
#include "contracon/classifier.h"
#include "contracon/tensor.h"

namespace testkit {

// Nested-loop zero-padded cross-correlation, row-major r×c input, k×k kernel.
std::vector<double> conv_same_oracle(const std::vector<double>& input, std::size_t rows, std::size_t cols,
                                     const std::vector<double>& kernel, std::size_t k);

struct OpGradResult {
    std::string op;
    std::size_t cases = 0;
    double worst = 0.0;
    double tolerance = 0.0;
    bool passed() const { return worst <= tolerance; }
};

// Central-difference checks at f64 for every differentiable op, `cases`
// random draws each.
std::vector<OpGradResult> gradient_suite(std::size_t cases, std::uint64_t seed);

// d=8, L=1, H=2, 8×8 grayscale, 4 tokens, no dropout.
contracon::ModelConfig micro_config();

// Task model whose output per image is supplied by a callback.
class ScriptedModel : public contracon::TaskClassifier {
   public:
    using Script = std::function<std::vector<double>(const contracon::Image& image)>;
    ScriptedModel(int task_id, std::vector<int> classes, Script script)
        : task_id_(task_id), classes_(std::move(classes)), script_(std::move(script)) {}

    int task_id() const override { return task_id_; }
    std::span<const int> classes() const override { return classes_; }
    std::vector<std::vector<double>> predict_proba(std::span<const contracon::Image> images) const override {
        std::vector<std::vector<double>> out;
        for (const auto& im : images) out.push_back(script_(im));
        return out;
    }

   private:
    int task_id_;
    std::vector<int> classes_;
    Script script_;
};

struct BatteryResult {
    std::size_t images = 0;
    std::size_t correct_beta1 = 0;
    std::size_t correct_beta0 = 0;
    std::size_t label_agreement = 0;  // CIL label == TIL label when the task is right
    std::size_t task_correct_default = 0;
};

// Five two-class task models. The true task answers consistently on every
// view; the others are sharper than it on the clean image but flip their
// answer on some views. In the adversarial variant one foreign model is
// sharper than the true one on the unaugmented input for every image.
BatteryResult inference_battery(bool adversarial, std::size_t images_per_task, std::uint64_t seed);

}  // namespace testkit
