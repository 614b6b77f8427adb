#include "contracon/cli.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <ostream>

#include <CLI11.hpp>

#include "contracon/checkpoint.h"
#include "contracon/error.h"
#include "contracon/run_config.h"
#include "contracon/trainer.h"

namespace contracon {

namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string netpbm_token(const std::vector<unsigned char>& b, std::size_t& pos) {
    for (;;) {
        while (pos < b.size() && std::isspace(b[pos])) ++pos;
        if (pos < b.size() && b[pos] == '#') {
            while (pos < b.size() && b[pos] != '\n') ++pos;
            continue;
        }
        break;
    }
    std::string tok;
    while (pos < b.size() && !std::isspace(b[pos])) tok.push_back(static_cast<char>(b[pos++]));
    return tok;
}

RunConfig config_for(const std::string& config_path, const std::string& fallback_text) {
    if (!config_path.empty()) return load_run_config(config_path);
    if (!fallback_text.empty()) return parse_run_config(fallback_text);
    fail(ErrorCode::usage, "no --config given and the base checkpoint carries no run configuration");
}

void require_file(const std::string& path, const char* what) {
    if (!std::filesystem::exists(path)) fail(ErrorCode::usage, std::string(what) + " not found: " + path);
}

std::string read_manifest_config(const std::string& base_path) {
    return read_checkpoint(base_path).manifest.run_config;
}

}  // namespace

Image read_netpbm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open image " + path.string());
    const std::vector<unsigned char> b{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::size_t pos = 0;
    const std::string magic = netpbm_token(b, pos);
    if (magic != "P5" && magic != "P6") fail(ErrorCode::format, path.string() + ": expected a binary PGM or PPM");
    const std::size_t channels = magic == "P5" ? 1 : 3;
    std::size_t width = 0, height = 0, maxval = 0;
    try {
        width = std::stoul(netpbm_token(b, pos));
        height = std::stoul(netpbm_token(b, pos));
        maxval = std::stoul(netpbm_token(b, pos));
    } catch (const std::exception&) {
        fail(ErrorCode::format, path.string() + ": malformed header");
    }
    if (width == 0 || height == 0 || maxval == 0 || maxval > 255) {
        fail(ErrorCode::format, path.string() + ": unsupported dimensions or maxval");
    }
    ++pos;  // single whitespace byte before the raster
    if (b.size() < pos + width * height * channels) {
        fail(ErrorCode::format, path.string() + ": truncated raster at offset " + std::to_string(b.size()));
    }
    Image image(channels, height, width);
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            for (std::size_t c = 0; c < channels; ++c) {
                image.at(c, y, x) = static_cast<float>(b[pos++]) / static_cast<float>(maxval);
            }
        }
    }
    return image;
}

void write_netpbm(const Image& image, const std::filesystem::path& path) {
    if (image.channels != 1 && image.channels != 3) fail(ErrorCode::data, "netpbm output needs 1 or 3 channels");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path.string());
    out << (image.channels == 1 ? "P5" : "P6") << "\n" << image.width << " " << image.height << "\n255\n";
    for (std::size_t y = 0; y < image.height; ++y) {
        for (std::size_t x = 0; x < image.width; ++x) {
            for (std::size_t c = 0; c < image.channels; ++c) {
                out.put(static_cast<char>(std::lround(std::clamp(image.at(c, y, x), 0.0f, 1.0f) * 255.0f)));
            }
        }
    }
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Continual learning with convolved transformer weights", "contracon"};
    app.require_subcommand(1);

    std::string config_path, data_path, out_path, base_path, adapters_dir, report_path, image_path, mode = "cil";
    int task_id = 0;
    std::size_t max_tasks = 0;

    auto* train_base_cmd = app.add_subcommand("train-base", "train the first-task backbone and freeze it");
    train_base_cmd->add_option("--config", config_path, "run configuration file")->required();
    train_base_cmd->add_option("--data", data_path, "data directory (ignored for synthetic data)")->required();
    train_base_cmd->add_option("--out", out_path, "output checkpoint")->required();

    auto* train_task_cmd = app.add_subcommand("train-task", "train the adapter of one later task");
    train_task_cmd->add_option("--config", config_path, "run configuration file");
    train_task_cmd->add_option("--base", base_path, "base checkpoint")->required();
    train_task_cmd->add_option("--task-id", task_id, "task number, 2..T")->required();
    train_task_cmd->add_option("--data", data_path, "data directory")->required();
    train_task_cmd->add_option("--out", out_path, "output adapter checkpoint")->required();

    auto* eval_cmd = app.add_subcommand("eval", "evaluate every stage and write the accuracy report");
    eval_cmd->add_option("--mode", mode, "til or cil")->required()->check(CLI::IsMember({"til", "cil"}));
    eval_cmd->add_option("--config", config_path, "run configuration file");
    eval_cmd->add_option("--base", base_path, "base checkpoint")->required();
    eval_cmd->add_option("--adapters", adapters_dir, "directory of adapter checkpoints");
    eval_cmd->add_option("--data", data_path, "data directory")->required();
    eval_cmd->add_option("--report", report_path, "report output file")->required();
    eval_cmd->add_option("--tasks", max_tasks, "evaluate only the first n tasks");

    auto* predict_cmd = app.add_subcommand("predict", "classify one PGM/PPM image");
    predict_cmd->add_option("--config", config_path, "run configuration file");
    predict_cmd->add_option("--base", base_path, "base checkpoint")->required();
    predict_cmd->add_option("--adapters", adapters_dir, "directory of adapter checkpoints");
    predict_cmd->add_option("--image", image_path, "input image")->required();
    predict_cmd->add_option("--mode", mode, "til or cil")->check(CLI::IsMember({"til", "cil"}));
    predict_cmd->add_option("--task-id", task_id, "task number for til mode");

    auto* params_cmd = app.add_subcommand("params", "print the per-task trainable parameter ledger");
    params_cmd->add_option("--config", config_path, "run configuration file")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "usage error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (*params_cmd) {
            const RunConfig config = load_run_config(config_path);
            const TaskParamLedger l = count_task_params(config.model, config.kernel_size, config.model.classes_first_task);
            out << "kernels " << l.kernels << "\n"
                << "gates " << l.gates << "\n"
                << "layernorms " << l.layernorms << "\n"
                << "pool " << l.pool << "\n"
                << "head " << l.head << "\n"
                << "total " << l.total << "\n";
            return 0;
        }

        if (*train_base_cmd) {
            require_file(config_path, "config");
            const RunConfig config = load_run_config(config_path);
            const ContinualData data = load_continual_data(config, data_path);
            Backbone<float> backbone(config.model, config.seed);
            TrainConfig tc = config.train;
            tc.seed = config.seed;
            const TrainStats stats = train_base(backbone, data.train_task(0), tc, [&](std::size_t epoch, double loss) {
                out << "epoch " << epoch + 1 << " loss " << loss << "\n";
            });
            save_backbone(backbone, out_path, to_text(config));
            out << "task 1 train accuracy " << stats.train_accuracy << "\n";
            return 0;
        }

        require_file(base_path, "base checkpoint");
        const RunConfig config = config_for(config_path, read_manifest_config(base_path));
        const Backbone<float> backbone = load_backbone(base_path);
        if (!backbone.frozen()) fail(ErrorCode::usage, "base checkpoint is not frozen");

        if (*train_task_cmd) {
            if (task_id < 2 || static_cast<std::size_t>(task_id) > config.data.num_tasks) {
                fail(ErrorCode::usage, "--task-id must be in [2, " + std::to_string(config.data.num_tasks) + "]");
            }
            const ContinualData data = load_continual_data(config, data_path);
            const TaskData task = data.train_task(static_cast<std::size_t>(task_id - 1));
            TaskAdapter<float> adapter = init_adapter(backbone, task_id, task.classes, config.kernel_size,
                                                      config.gate_mode, config.seed + static_cast<std::uint64_t>(task_id));
            TrainConfig tc = config.train;
            tc.seed = config.seed + static_cast<std::uint64_t>(task_id);
            const TrainStats stats = train_task(backbone, adapter, task, tc, [&](std::size_t epoch, double loss) {
                out << "epoch " << epoch + 1 << " loss " << loss << "\n";
            });
            save_adapter(adapter, out_path);
            out << "task " << task_id << " train accuracy " << stats.train_accuracy << "\n";
            return 0;
        }

        std::vector<TaskAdapter<float>> adapters;
        if (!adapters_dir.empty()) {
            if (!std::filesystem::is_directory(adapters_dir)) {
                fail(ErrorCode::usage, "adapter directory not found: " + adapters_dir);
            }
            adapters = load_adapter_dir(adapters_dir, backbone);
        }
        InferenceConfig inference = config.inference;
        inference.seed = config.seed;

        if (*eval_cmd) {
            const std::size_t tasks = max_tasks ? std::min(max_tasks, config.data.num_tasks) : config.data.num_tasks;
            if (tasks > adapters.size() + 1) {
                fail(ErrorCode::usage, std::to_string(tasks) + " tasks need " + std::to_string(tasks - 1) +
                                           " adapters, found " + std::to_string(adapters.size()));
            }
            adapters.resize(tasks - 1);
            const ContinualData data = load_continual_data(config, data_path);
            std::vector<TaskData> tests;
            for (std::size_t t = 0; t < tasks; ++t) tests.push_back(data.test_task(t));
            const EvalReport report = evaluate(backbone, adapters, tests, parse_eval_mode(mode), inference);
            std::ofstream rep(report_path);
            if (!rep) fail(ErrorCode::io, "cannot write report " + report_path);
            write_report(rep, report);
            out << "A_T mode=" << mode << " T=" << report.stages() << " value=" << report.final_average() << "\n";
            return 0;
        }

        if (*predict_cmd) {
            require_file(image_path, "image");
            const Image image = read_netpbm(image_path);
            std::vector<TaskModel<float>> models;
            models.push_back(TaskModel<float>::from_base(backbone));
            for (const auto& a : adapters) models.push_back(materialize(backbone, a));
            std::vector<const TaskClassifier*> handles;
            for (const auto& m : models) handles.push_back(&m);

            Classification c;
            if (mode == "til") {
                const auto it = std::find_if(handles.begin(), handles.end(),
                                             [&](const TaskClassifier* m) { return m->task_id() == task_id; });
                if (it == handles.end()) fail(ErrorCode::usage, "no model for task " + std::to_string(task_id));
                c = classify_with_task(image, **it);
            } else {
                c = classify(image, handles, inference);
            }
            out << "task " << c.task_id << " label " << c.label << "\n";
            return 0;
        }
    } catch (const Error& e) {
        err << e.what() << "\n";
        switch (e.code()) {
            case ErrorCode::usage:
            case ErrorCode::config:
            case ErrorCode::config_mismatch:
            case ErrorCode::io: return 2;
            default: return 1;
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace contracon
