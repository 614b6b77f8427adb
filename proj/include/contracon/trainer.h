#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "contracon/adapter.h"
#include "contracon/backbone.h"
#include "contracon/data.h"
#include "contracon/optim.h"
#include "contracon/task_inference.h"

namespace contracon {

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 32;
    LrSchedule schedule;
    AdamWConfig adamw;  // weight_decay here is ignored; see the two fields below
    double weight_decay_base = 0.05;
    double weight_decay_adapter = 0.0;
    std::uint64_t seed = 0;
    TrainAugment augment;

    void validate() const;
};

struct TrainStats {
    std::vector<double> epoch_loss;
    double train_accuracy = 0.0;  // eval mode, after the last epoch
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Trains every backbone tensor on task 1, sets the input normalization from
// task-1 statistics, then freezes the backbone.
TrainStats train_base(Backbone<float>& backbone, const TaskData& data, const TrainConfig& config,
                      const EpochCallback& on_epoch = {});

// Trains only the adapter's tensors; W'' is rebuilt from the current kernels
// and gates on every step.
TrainStats train_task(const Backbone<float>& backbone, TaskAdapter<float>& adapter, const TaskData& data,
                      const TrainConfig& config, const EpochCallback& on_epoch = {});

// Fraction of images whose argmax matches the local label.
double accuracy(const TaskClassifier& model, const TaskData& data);

enum class EvalMode { til, cil };

EvalMode parse_eval_mode(std::string_view name);
std::string_view to_string(EvalMode mode);

struct EvalReport {
    EvalMode mode = EvalMode::til;
    // a[s][t]: accuracy on task t+1 after training stage s+1; row s has s+1 entries.
    std::vector<std::vector<double>> a;

    std::size_t stages() const { return a.size(); }
    double average(std::size_t stage) const;  // A_T for T = stage + 1
    double final_average() const { return average(a.size() - 1); }
};

// Mean of per-task accuracies.
double average_accuracy(std::span<const double> accuracies);

// Accuracies on tasks 1..models.size() using those models only.
std::vector<double> evaluate_stage(std::span<const TaskClassifier* const> models, std::span<const TaskData> tests,
                                   EvalMode mode, const InferenceConfig& inference);

// Task 1 is served by the backbone; adapters cover tasks 2..T in order.
// Throws a configuration error when a seen task has no adapter.
EvalReport evaluate(const Backbone<float>& backbone, std::span<const TaskAdapter<float>> adapters,
                    std::span<const TaskData> tests, EvalMode mode, const InferenceConfig& inference,
                    bool all_stages = true);

// One line per (T, t) entry plus `A_T mode=<m> T=<n> value=<v>` per stage.
void write_report(std::ostream& out, const EvalReport& report);

// Baseline: one network fine-tuned in full on each task in turn, with a single
// head of |C^t| outputs reused by every task. Returns a[s][t] (task id given).
std::vector<std::vector<double>> naive_finetune(const ModelConfig& config, std::span<const TaskData> train,
                                                std::span<const TaskData> tests, const TrainConfig& train_config,
                                                std::uint64_t seed);

}  // namespace contracon
