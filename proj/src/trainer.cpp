#include "contracon/trainer.h"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>

#include "contracon/error.h"
#include "contracon/ops.h"

namespace contracon {

namespace {

using LogitsFn = std::function<Tensor<float>(const Tensor<float>& batch, ForwardContext<float>& ctx)>;

TrainStats fit(const TaskData& data, const TrainConfig& config, const InputNormalization& norm,
               std::vector<Tensor<float>> params, double weight_decay, const LogitsFn& logits_fn,
               const EpochCallback& on_epoch) {
    AdamWConfig adamw = config.adamw;
    adamw.weight_decay = weight_decay;
    AdamW optimizer(std::move(params), adamw);

    Rng rng(config.seed);
    Rng shuffle_rng = rng.fork();
    Rng augment_rng = rng.fork();
    Rng dropout_rng = rng.fork();

    const std::size_t n = data.size();
    const std::size_t batches = (n + config.batch_size - 1) / config.batch_size;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    TrainStats stats;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double total = 0.0;
        for (std::size_t b = 0; b < batches; ++b) {
            const std::size_t lo = b * config.batch_size, hi = std::min(n, lo + config.batch_size);
            std::vector<Image> images;
            std::vector<int> labels;
            for (std::size_t i = lo; i < hi; ++i) {
                images.push_back(train_transform(data.images[order[i]], augment_rng, config.augment));
                labels.push_back(data.labels[order[i]]);
            }
            ForwardContext<float> ctx{true, &dropout_rng, nullptr};
            const Tensor<float> loss = cross_entropy(logits_fn(images_to_batch<float>(images, norm), ctx), labels);
            loss.backward();
            const double progress = static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches);
            optimizer.step(lr_schedule(progress, config.schedule));
            optimizer.zero_grad();
            total += static_cast<double>(loss.item()) * static_cast<double>(hi - lo);
        }
        stats.epoch_loss.push_back(total / static_cast<double>(n));
        if (on_epoch) on_epoch(epoch, stats.epoch_loss.back());
    }
    return stats;
}

std::size_t argmax(const std::vector<double>& p) {
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

}  // namespace

void TrainConfig::validate() const {
    if (epochs < 1) fail(ErrorCode::config, "epochs must be at least 1");
    if (batch_size < 1) fail(ErrorCode::config, "batch_size must be at least 1");
    if (!(schedule.lr_min <= schedule.lr_max)) fail(ErrorCode::config, "lr_min must not exceed lr_max");
    if (!(schedule.restart_period > 0.0) || !(schedule.restart_mult >= 1.0)) {
        fail(ErrorCode::config, "restart period must be positive and restart multiplier at least 1");
    }
}

TrainStats train_base(Backbone<float>& backbone, const TaskData& data, const TrainConfig& config,
                      const EpochCallback& on_epoch) {
    if (data.size() == 0) fail(ErrorCode::data, "train_base: empty dataset");
    if (backbone.frozen()) fail(ErrorCode::usage, "train_base: backbone is already frozen");
    const ModelConfig& mc = backbone.config();
    if (data.classes.size() != mc.classes_first_task) {
        fail(ErrorCode::config, "task 1 has " + std::to_string(data.classes.size()) + " classes but the head has " +
                                    std::to_string(mc.classes_first_task));
    }
    backbone.set_classes(data.classes);
    backbone.set_normalization(channel_statistics(data.images));

    TrainStats stats;
    if (config.epochs > 0) {
        config.validate();
        const CctWeights<float>& w = backbone.weights();
        stats = fit(data, config, backbone.normalization(), backbone.parameters(), config.weight_decay_base,
                    [&](const Tensor<float>& batch, ForwardContext<float>& ctx) {
                        return forward_logits(w, mc, batch, ctx);
                    },
                    on_epoch);
    }
    backbone.freeze();
    stats.train_accuracy = accuracy(TaskModel<float>::from_base(backbone), data);
    return stats;
}

TrainStats train_task(const Backbone<float>& backbone, TaskAdapter<float>& adapter, const TaskData& data,
                      const TrainConfig& config, const EpochCallback& on_epoch) {
    if (!backbone.frozen()) fail(ErrorCode::usage, "train_task: backbone must be frozen");
    if (data.size() == 0) fail(ErrorCode::data, "train_task: empty dataset");
    check_compatible(backbone, adapter);
    if (data.classes.size() != adapter.classes.size()) {
        fail(ErrorCode::config, "task data and adapter head disagree on the class count");
    }
    TrainStats stats;
    if (config.epochs > 0) {
        config.validate();
        stats = fit(data, config, backbone.normalization(), adapter.parameters(), config.weight_decay_adapter,
                    [&](const Tensor<float>& batch, ForwardContext<float>& ctx) {
                        const CctWeights<float> w = adapted_weights(backbone, adapter);
                        return forward_logits(w, backbone.config(), batch, ctx, adapter.classes.size());
                    },
                    on_epoch);
    }
    stats.train_accuracy = accuracy(materialize(backbone, adapter), data);
    return stats;
}

double accuracy(const TaskClassifier& model, const TaskData& data) {
    if (data.size() == 0) fail(ErrorCode::data, "accuracy of an empty set");
    constexpr std::size_t kChunk = 256;
    std::size_t correct = 0;
    for (std::size_t lo = 0; lo < data.size(); lo += kChunk) {
        const std::size_t hi = std::min(data.size(), lo + kChunk);
        const auto probs = model.predict_proba(std::span<const Image>(data.images).subspan(lo, hi - lo));
        for (std::size_t i = lo; i < hi; ++i) {
            if (static_cast<int>(argmax(probs[i - lo])) == data.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

EvalMode parse_eval_mode(std::string_view name) {
    if (name == "til") return EvalMode::til;
    if (name == "cil") return EvalMode::cil;
    fail(ErrorCode::config, "unknown eval mode '" + std::string(name) + "'");
}

std::string_view to_string(EvalMode mode) { return mode == EvalMode::til ? "til" : "cil"; }

double average_accuracy(std::span<const double> accuracies) {
    if (accuracies.empty()) fail(ErrorCode::usage, "average of zero tasks");
    return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

double EvalReport::average(std::size_t stage) const { return average_accuracy(a.at(stage)); }

std::vector<double> evaluate_stage(std::span<const TaskClassifier* const> models, std::span<const TaskData> tests,
                                   EvalMode mode, const InferenceConfig& inference) {
    if (models.empty()) fail(ErrorCode::usage, "evaluation needs at least one task model");
    if (tests.size() < models.size()) fail(ErrorCode::config, "fewer test sets than task models");
    std::vector<double> row;
    for (std::size_t t = 0; t < models.size(); ++t) {
        const TaskData& test = tests[t];
        if (mode == EvalMode::til) {
            row.push_back(accuracy(*models[t], test));
            continue;
        }
        const auto predictions = predict_tasks(test.images, models, inference);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < test.size(); ++i) {
            const Classification c = label_from_prediction(predictions[i], models);
            if (c.label == test.classes[static_cast<std::size_t>(test.labels[i])]) ++correct;
        }
        row.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
    }
    return row;
}

EvalReport evaluate(const Backbone<float>& backbone, std::span<const TaskAdapter<float>> adapters,
                    std::span<const TaskData> tests, EvalMode mode, const InferenceConfig& inference, bool all_stages) {
    if (tests.empty()) fail(ErrorCode::config, "no test sets");
    if (tests.size() > adapters.size() + 1) {
        fail(ErrorCode::config, "task " + std::to_string(adapters.size() + 2) + " has no adapter");
    }
    std::vector<TaskModel<float>> models;
    models.push_back(TaskModel<float>::from_base(backbone));
    for (std::size_t i = 0; i + 1 < tests.size(); ++i) {
        const TaskAdapter<float>& adapter = adapters[i];
        if (adapter.task_id != static_cast<int>(i + 2)) {
            fail(ErrorCode::config, "expected the adapter of task " + std::to_string(i + 2) + ", found task " +
                                        std::to_string(adapter.task_id));
        }
        models.push_back(materialize(backbone, adapter));
    }
    std::vector<const TaskClassifier*> handles;
    for (const auto& m : models) handles.push_back(&m);

    EvalReport report;
    report.mode = mode;
    const std::size_t first = all_stages ? 1 : handles.size();
    for (std::size_t s = 1; s <= handles.size(); ++s) {
        if (s < first) continue;
        report.a.push_back(evaluate_stage(std::span(handles).first(s), tests, mode, inference));
    }
    if (!all_stages) {
        // Keep the row index equal to the stage index.
        std::vector<std::vector<double>> rows(handles.size());
        rows.back() = std::move(report.a.back());
        report.a = std::move(rows);
    }
    return report;
}

void write_report(std::ostream& out, const EvalReport& report) {
    const auto mode = to_string(report.mode);
    for (std::size_t s = 0; s < report.a.size(); ++s) {
        if (report.a[s].empty()) continue;
        for (std::size_t t = 0; t < report.a[s].size(); ++t) {
            out << "a T=" << s + 1 << " t=" << t + 1 << " mode=" << mode << " accuracy=" << report.a[s][t] << "\n";
        }
        out << "A_T mode=" << mode << " T=" << s + 1 << " value=" << report.average(s) << "\n";
    }
}

std::vector<std::vector<double>> naive_finetune(const ModelConfig& config, std::span<const TaskData> train,
                                                std::span<const TaskData> tests, const TrainConfig& train_config,
                                                std::uint64_t seed) {
    if (train.empty() || train.size() != tests.size()) fail(ErrorCode::config, "naive_finetune: train/test task mismatch");
    Backbone<float> model(config, seed);
    model.set_normalization(channel_statistics(train.front().images));
    std::vector<std::vector<double>> a;
    for (std::size_t s = 0; s < train.size(); ++s) {
        if (train[s].classes.size() != config.classes_first_task) {
            fail(ErrorCode::config, "naive_finetune: every task must match the shared head size");
        }
        TrainConfig stage = train_config;
        stage.seed = train_config.seed + s;
        const CctWeights<float>& w = model.weights();
        fit(train[s], stage, model.normalization(), model.parameters(), train_config.weight_decay_base,
            [&](const Tensor<float>& batch, ForwardContext<float>& ctx) { return forward_logits(w, config, batch, ctx); },
            {});
        std::vector<double> row;
        for (std::size_t t = 0; t <= s; ++t) {
            const TaskModel<float> view(config, w, model.normalization(), static_cast<int>(t + 1), tests[t].classes);
            row.push_back(accuracy(view, tests[t]));
        }
        a.push_back(std::move(row));
    }
    return a;
}

}  // namespace contracon
