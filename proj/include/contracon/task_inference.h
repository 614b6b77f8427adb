#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "contracon/augment.h"
#include "contracon/classifier.h"

namespace contracon {

enum class EntropyNormalization { automatic, on, off };

EntropyNormalization parse_entropy_normalization(std::string_view name);
std::string_view to_string(EntropyNormalization mode);

struct InferenceConfig {
    std::size_t num_augmentations = 10;
    // Weight of the augmentation-averaged entropy; 1 - beta goes to the
    // entropy of the unaugmented prediction.
    double beta = 0.6;
    // automatic: divide by ln C only when tasks have different class counts.
    EntropyNormalization normalize = EntropyNormalization::automatic;
    AugmentationParams augmentation;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TaskPrediction {
    std::vector<double> scores;                  // per model, lower is better
    std::vector<std::vector<double>> averaged;   // mean over augmented views
    std::vector<std::vector<double>> original;   // unaugmented prediction
    std::size_t chosen = 0;                      // index into the model list
    int task_id = 0;
};

// Shannon entropy in nats with 0 ln 0 = 0; optionally divided by ln C.
// Throws a data error unless p is a distribution (sum within 1e-5, p >= 0).
double entropy(std::span<const double> p, bool normalize = false);

// Scores every task model by
//   beta * H(mean_v softmax(f_t(view_v))) + (1 - beta) * H(softmax(f_t(x)))
// and picks the lowest, breaking exact ties toward the lowest task id.
TaskPrediction predict_task(const Image& image, std::span<const TaskClassifier* const> models,
                            const InferenceConfig& config);

// Batched form; evaluates each model once per chunk of images.
std::vector<TaskPrediction> predict_tasks(std::span<const Image> images, std::span<const TaskClassifier* const> models,
                                          const InferenceConfig& config);

struct Classification {
    int task_id = 0;
    int label = 0;  // global class id
};

// Class-incremental: infer the task, then classify the unaugmented image with
// that task's model.
Classification classify(const Image& image, std::span<const TaskClassifier* const> models,
                        const InferenceConfig& config);

// Task-incremental: the task is given.
Classification classify_with_task(const Image& image, const TaskClassifier& model);

// Maps an already computed prediction to a global label.
Classification label_from_prediction(const TaskPrediction& prediction, std::span<const TaskClassifier* const> models);

}  // namespace contracon
