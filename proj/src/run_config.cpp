#include "contracon/run_config.h"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "contracon/error.h"

namespace contracon {

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value) {
    fail(ErrorCode::config, "invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'");
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v);
    return out;
}

double to_double(std::string_view key, std::string_view v) {
    std::string s(v);
    if (s == "inf") return std::numeric_limits<double>::infinity();
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(s, &used);
    } catch (const std::exception&) {
        bad_value(key, v);
    }
    if (used != s.size()) bad_value(key, v);
    return out;
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "on" || v == "true" || v == "1") return true;
    if (v == "off" || v == "false" || v == "0") return false;
    bad_value(key, v);
}

// "out:kernel:stride:padding:pool|nopool" stages separated by ';'.
std::vector<TokenizerStage> parse_tokenizer(std::string_view key, std::string_view v) {
    std::vector<TokenizerStage> stages;
    std::size_t start = 0;
    while (start <= v.size()) {
        const auto end = std::min(v.find(';', start), v.size());
        const std::string_view item = trim(v.substr(start, end - start));
        std::vector<std::string_view> f;
        std::size_t s = 0;
        while (s <= item.size()) {
            const auto e = std::min(item.find(':', s), item.size());
            f.push_back(item.substr(s, e - s));
            s = e + 1;
        }
        if (f.size() != 5 || (f[4] != "pool" && f[4] != "nopool")) bad_value(key, v);
        stages.push_back({to_u64(key, f[0]), to_u64(key, f[1]), to_u64(key, f[2]), to_u64(key, f[3]), f[4] == "pool"});
        start = end + 1;
    }
    return stages;
}

std::string tokenizer_text(const std::vector<TokenizerStage>& stages) {
    std::string out;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        if (i) out += ";";
        out += std::to_string(s.out_channels) + ":" + std::to_string(s.kernel) + ":" + std::to_string(s.stride) + ":" +
               std::to_string(s.padding) + ":" + (s.pooling ? "pool" : "nopool");
    }
    return out;
}

std::string num(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

struct Field {
    std::function<void(RunConfig&, std::string_view)> set;
    std::function<std::string(const RunConfig&)> get;
};

const std::vector<std::pair<std::string, Field>>& fields() {
    using C = RunConfig;
    auto sz = [](std::size_t& (*m)(C&)) {
        return Field{[m](C& c, std::string_view v) { m(c) = static_cast<std::size_t>(to_u64("", v)); },
                     [m](const C& c) { return std::to_string(m(const_cast<C&>(c))); }};
    };
    auto u64 = [](std::uint64_t& (*m)(C&)) {
        return Field{[m](C& c, std::string_view v) { m(c) = to_u64("", v); },
                     [m](const C& c) { return std::to_string(m(const_cast<C&>(c))); }};
    };
    auto dbl = [](double& (*m)(C&)) {
        return Field{[m](C& c, std::string_view v) { m(c) = to_double("", v); },
                     [m](const C& c) { return num(m(const_cast<C&>(c))); }};
    };
    auto flag = [](bool& (*m)(C&)) {
        return Field{[m](C& c, std::string_view v) { m(c) = to_bool("", v); },
                     [m](const C& c) { return std::string(m(const_cast<C&>(c)) ? "on" : "off"); }};
    };
    static const std::vector<std::pair<std::string, Field>> table = {
        {"seed", u64([](C& c) -> std::uint64_t& { return c.seed; })},
        // architecture
        {"embed_dim", sz([](C& c) -> std::size_t& { return c.model.embed_dim; })},
        {"layers", sz([](C& c) -> std::size_t& { return c.model.layers; })},
        {"heads", sz([](C& c) -> std::size_t& { return c.model.heads; })},
        {"ffn_ratio", dbl([](C& c) -> double& { return c.model.ffn_ratio; })},
        {"tokenizer", Field{[](C& c, std::string_view v) { c.model.tokenizer = parse_tokenizer("tokenizer", v); },
                            [](const C& c) { return tokenizer_text(c.model.tokenizer); }}},
        {"attn_dropout", dbl([](C& c) -> double& { return c.model.attn_dropout; })},
        {"stochastic_depth", dbl([](C& c) -> double& { return c.model.stochastic_depth; })},
        {"image_channels", sz([](C& c) -> std::size_t& { return c.model.image.channels; })},
        {"image_height", sz([](C& c) -> std::size_t& { return c.model.image.height; })},
        {"image_width", sz([](C& c) -> std::size_t& { return c.model.image.width; })},
        {"classes_per_task", sz([](C& c) -> std::size_t& { return c.model.classes_first_task; })},
        {"layer_norm_eps", dbl([](C& c) -> double& { return c.model.layer_norm_eps; })},
        // adapter
        {"kernel_size", sz([](C& c) -> std::size_t& { return c.kernel_size; })},
        {"gate_mode", Field{[](C& c, std::string_view v) { c.gate_mode = parse_gate_mode(v); },
                            [](const C& c) { return std::string(to_string(c.gate_mode)); }}},
        // training
        {"epochs", sz([](C& c) -> std::size_t& { return c.train.epochs; })},
        {"batch_size", sz([](C& c) -> std::size_t& { return c.train.batch_size; })},
        {"lr_max", dbl([](C& c) -> double& { return c.train.schedule.lr_max; })},
        {"lr_min", dbl([](C& c) -> double& { return c.train.schedule.lr_min; })},
        {"restart_period", dbl([](C& c) -> double& { return c.train.schedule.restart_period; })},
        {"restart_mult", dbl([](C& c) -> double& { return c.train.schedule.restart_mult; })},
        {"adam_beta1", dbl([](C& c) -> double& { return c.train.adamw.beta1; })},
        {"adam_beta2", dbl([](C& c) -> double& { return c.train.adamw.beta2; })},
        {"adam_eps", dbl([](C& c) -> double& { return c.train.adamw.eps; })},
        {"weight_decay_base", dbl([](C& c) -> double& { return c.train.weight_decay_base; })},
        {"weight_decay_adapter", dbl([](C& c) -> double& { return c.train.weight_decay_adapter; })},
        {"train_augment", flag([](C& c) -> bool& { return c.train.augment.enabled; })},
        {"train_augment_pad", sz([](C& c) -> std::size_t& { return c.train.augment.pad; })},
        {"train_augment_flip", flag([](C& c) -> bool& { return c.train.augment.flip; })},
        // inference
        {"num_augmentations", sz([](C& c) -> std::size_t& { return c.inference.num_augmentations; })},
        {"beta", dbl([](C& c) -> double& { return c.inference.beta; })},
        {"normalize_entropy",
         Field{[](C& c, std::string_view v) { c.inference.normalize = parse_entropy_normalization(v); },
               [](const C& c) { return std::string(to_string(c.inference.normalize)); }}},
        {"aug_contrast", dbl([](C& c) -> double& { return c.inference.augmentation.contrast; })},
        {"aug_translate_divisor", sz([](C& c) -> std::size_t& { return c.inference.augmentation.translate_divisor; })},
        {"aug_sharpness", dbl([](C& c) -> double& { return c.inference.augmentation.sharpness; })},
        {"aug_posterize_bits", sz([](C& c) -> std::size_t& { return c.inference.augmentation.posterize_bits; })},
        {"aug_brightness", dbl([](C& c) -> double& { return c.inference.augmentation.brightness; })},
        {"aug_brightness_strong", dbl([](C& c) -> double& { return c.inference.augmentation.brightness_strong; })},
        {"aug_sharpness_strong", dbl([](C& c) -> double& { return c.inference.augmentation.sharpness_strong; })},
        // data
        {"data_format", Field{[](C& c, std::string_view v) { c.data.format = parse_data_format(v); },
                              [](const C& c) { return std::string(to_string(c.data.format)); }}},
        {"num_tasks", sz([](C& c) -> std::size_t& { return c.data.num_tasks; })},
        {"split_order", Field{[](C& c, std::string_view v) { c.data.order = parse_split_order(v); },
                              [](const C& c) { return std::string(to_string(c.data.order)); }}},
        {"split_seed", u64([](C& c) -> std::uint64_t& { return c.data.split_seed; })},
        {"synth_classes", sz([](C& c) -> std::size_t& { return c.data.synth.classes; })},
        {"synth_train_per_class", sz([](C& c) -> std::size_t& { return c.data.synth.samples_per_class; })},
        {"synth_test_per_class", sz([](C& c) -> std::size_t& { return c.data.synth_test_per_class; })},
        {"synth_separation", dbl([](C& c) -> double& { return c.data.synth.separation; })},
        {"synth_template_seed", u64([](C& c) -> std::uint64_t& { return c.data.synth.template_seed; })},
    };
    return table;
}

}  // namespace

DataFormat parse_data_format(std::string_view name) {
    if (name == "synth") return DataFormat::synth;
    if (name == "idx") return DataFormat::idx;
    if (name == "cifar10") return DataFormat::cifar10;
    if (name == "cifar100") return DataFormat::cifar100;
    fail(ErrorCode::config, "unknown data format '" + std::string(name) + "'");
}

std::string_view to_string(DataFormat format) {
    switch (format) {
        case DataFormat::synth: return "synth";
        case DataFormat::idx: return "idx";
        case DataFormat::cifar10: return "cifar10";
        case DataFormat::cifar100: return "cifar100";
    }
    return "synth";
}

RunConfig RunConfig::cifar() {
    RunConfig c;
    c.profile = "cifar";
    c.model = ModelConfig::cifar();
    c.kernel_size = 15;
    c.train.augment.enabled = true;
    c.data.format = DataFormat::cifar10;
    c.data.num_tasks = 1;
    return c;
}

RunConfig RunConfig::tiny() {
    RunConfig c;
    c.profile = "tiny";
    c.model = ModelConfig::tiny();
    c.kernel_size = 7;
    c.train.augment.enabled = false;
    c.data.format = DataFormat::synth;
    c.data.num_tasks = 5;
    c.data.synth.classes = 10;
    c.data.synth.samples_per_class = 200;
    c.data.synth.separation = 10.0;
    c.data.synth.height = c.model.image.height;
    c.data.synth.width = c.model.image.width;
    c.data.synth.channels = c.model.image.channels;
    return c;
}

RunConfig RunConfig::for_profile(std::string_view name) {
    if (name == "cifar") return cifar();
    if (name == "tiny") return tiny();
    fail(ErrorCode::config, "unknown profile '" + std::string(name) + "'");
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    inference.validate();
    if (kernel_size == 0 || kernel_size % 2 == 0) fail(ErrorCode::config, "kernel_size must be odd");
    if (data.num_tasks == 0) fail(ErrorCode::config, "num_tasks must be at least 1");
}

RunConfig parse_run_config(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::string profile = "cifar";
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = std::min(text.find('\n', start), text.size());
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            fail(ErrorCode::config, "line " + std::to_string(line_no) + ": expected 'key = value'");
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key == "profile") {
            profile = value;
        } else {
            entries.emplace_back(std::move(key), std::move(value));
        }
    }
    RunConfig config = RunConfig::for_profile(profile);
    std::map<std::string, const Field*> index;
    for (const auto& [k, f] : fields()) index.emplace(k, &f);
    for (const auto& [key, value] : entries) {
        const auto it = index.find(key);
        if (it == index.end()) fail(ErrorCode::config, "unknown config key '" + key + "'");
        try {
            it->second->set(config, value);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::config) throw;
            bad_value(key, value);
        }
    }
    // Synthetic images follow the model's input shape.
    config.data.synth.channels = config.model.image.channels;
    config.data.synth.height = config.model.image.height;
    config.data.synth.width = config.model.image.width;
    config.validate();
    return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string to_text(const RunConfig& config) {
    std::string out = "profile = " + config.profile + "\n";
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(config) + "\n";
    return out;
}

TaskData ContinualData::train_task(std::size_t t) const { return task_data(train, split.train.at(t), split.classes.at(t)); }

TaskData ContinualData::test_task(std::size_t t) const { return task_data(test, split.test.at(t), split.classes.at(t)); }

ContinualData load_continual_data(const RunConfig& config, const std::filesystem::path& root) {
    ContinualData out;
    switch (config.data.format) {
        case DataFormat::synth: {
            SynthSpec spec = config.data.synth;
            out.train = synth_dataset(spec, config.seed * 2 + 1);
            spec.samples_per_class = config.data.synth_test_per_class;
            out.test = synth_dataset(spec, config.seed * 2 + 2);
            break;
        }
        case DataFormat::idx:
            out.train = load_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte");
            out.test = load_idx(root / "t10k-images-idx3-ubyte", root / "t10k-labels-idx1-ubyte");
            out.test.num_classes = out.train.num_classes = std::max(out.train.num_classes, out.test.num_classes);
            break;
        case DataFormat::cifar10: {
            for (int b = 1; b <= 5; ++b) {
                Dataset part = load_cifar_binary(root / ("data_batch_" + std::to_string(b) + ".bin"), CifarVariant::cifar10);
                out.train.num_classes = part.num_classes;
                std::move(part.images.begin(), part.images.end(), std::back_inserter(out.train.images));
                out.train.labels.insert(out.train.labels.end(), part.labels.begin(), part.labels.end());
            }
            out.test = load_cifar_binary(root / "test_batch.bin", CifarVariant::cifar10);
            break;
        }
        case DataFormat::cifar100:
            out.train = load_cifar_binary(root / "train.bin", CifarVariant::cifar100);
            out.test = load_cifar_binary(root / "test.bin", CifarVariant::cifar100);
            break;
    }
    const Image& first = out.train.images.front();
    const ImageShape& want = config.model.image;
    if (first.channels != want.channels || first.height != want.height || first.width != want.width) {
        fail(ErrorCode::config, "data images are " + std::to_string(first.channels) + "x" + std::to_string(first.height) +
                                    "x" + std::to_string(first.width) + " but the model expects " +
                                    std::to_string(want.channels) + "x" + std::to_string(want.height) + "x" +
                                    std::to_string(want.width));
    }
    out.split = make_splits(out.train, out.test, config.data.num_tasks, config.data.split_seed, config.data.order);
    for (const auto& classes : out.split.classes) {
        if (classes.size() != config.model.classes_first_task) {
            fail(ErrorCode::config, "tasks have " + std::to_string(classes.size()) + " classes but classes_per_task is " +
                                        std::to_string(config.model.classes_first_task));
        }
    }
    return out;
}

}  // namespace contracon
