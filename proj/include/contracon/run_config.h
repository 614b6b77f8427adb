#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "contracon/adapter.h"
#include "contracon/backbone.h"
#include "contracon/data.h"
#include "contracon/task_inference.h"
#include "contracon/trainer.h"

namespace contracon {

enum class DataFormat { synth, idx, cifar10, cifar100 };

DataFormat parse_data_format(std::string_view name);
std::string_view to_string(DataFormat format);

struct DataConfig {
    DataFormat format = DataFormat::cifar10;
    std::size_t num_tasks = 5;
    SplitOrder order = SplitOrder::given;
    std::uint64_t split_seed = 0;
    SynthSpec synth;
    std::size_t synth_test_per_class = 50;
};

// Every tunable of a run. The text form is one `key = value` per line; `#`
// starts a comment; unknown keys are rejected.
struct RunConfig {
    std::string profile = "cifar";
    ModelConfig model = ModelConfig::cifar();
    std::size_t kernel_size = 15;
    GateMode gate_mode = GateMode::learnable;
    TrainConfig train;
    InferenceConfig inference;
    DataConfig data;
    std::uint64_t seed = 0;

    static RunConfig cifar();
    static RunConfig tiny();
    static RunConfig for_profile(std::string_view name);

    void validate() const;
};

// `profile` is applied first wherever it appears; later keys override it.
RunConfig parse_run_config(std::string_view text);
RunConfig load_run_config(const std::filesystem::path& path);
// Canonical text form; parse_run_config(to_text(c)) reproduces c.
std::string to_text(const RunConfig& config);

struct ContinualData {
    Dataset train;
    Dataset test;
    TaskSplit split;

    TaskData train_task(std::size_t t) const;  // t is zero-based
    TaskData test_task(std::size_t t) const;
};

// Loads (or synthesizes) the datasets named by the config and splits them.
// `root` is the data directory; it is ignored for synthetic data.
ContinualData load_continual_data(const RunConfig& config, const std::filesystem::path& root);

}  // namespace contracon
