#include "contracon/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <unistd.h>

#include <json.hpp>

#include "contracon/error.h"

namespace contracon {

namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'C', 'T', 'C', 'N'};

template <typename U>
void put(std::vector<unsigned char>& out, U v) {
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, &v, sizeof(U));
    out.insert(out.end(), bytes, bytes + sizeof(U));
}

struct Reader {
    const std::vector<unsigned char>& bytes;
    const std::filesystem::path& path;
    std::size_t offset = 0;

    void need(std::size_t n, const char* what) const {
        if (offset + n > bytes.size()) {
            fail(ErrorCode::truncated, path.string() + ": truncated " + what + " at offset " + std::to_string(offset));
        }
    }
    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v;
        std::memcpy(&v, bytes.data() + offset, sizeof(U));
        offset += sizeof(U);
        return v;
    }
    std::string string(std::size_t n, const char* what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes.data() + offset), n);
        offset += n;
        return s;
    }
};

json tokenizer_json(const TokenizerStage& s) {
    return {{"out_channels", s.out_channels}, {"kernel", s.kernel}, {"stride", s.stride},
            {"padding", s.padding}, {"pooling", s.pooling}};
}

json config_json(const ModelConfig& c) {
    json stages = json::array();
    for (const auto& s : c.tokenizer) stages.push_back(tokenizer_json(s));
    return {{"embed_dim", c.embed_dim},
            {"layers", c.layers},
            {"heads", c.heads},
            {"ffn_ratio", c.ffn_ratio},
            {"tokenizer", stages},
            {"attn_dropout", c.attn_dropout},
            {"stochastic_depth", c.stochastic_depth},
            {"image", {{"channels", c.image.channels}, {"height", c.image.height}, {"width", c.image.width}}},
            {"classes_first_task", c.classes_first_task},
            {"layer_norm_eps", c.layer_norm_eps}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.embed_dim = j.at("embed_dim").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.heads = j.at("heads").get<std::size_t>();
    c.ffn_ratio = j.at("ffn_ratio").get<double>();
    c.tokenizer.clear();
    for (const auto& s : j.at("tokenizer")) {
        c.tokenizer.push_back({s.at("out_channels").get<std::size_t>(), s.at("kernel").get<std::size_t>(),
                               s.at("stride").get<std::size_t>(), s.at("padding").get<std::size_t>(),
                               s.at("pooling").get<bool>()});
    }
    c.attn_dropout = j.at("attn_dropout").get<double>();
    c.stochastic_depth = j.at("stochastic_depth").get<double>();
    const auto& im = j.at("image");
    c.image = {im.at("channels").get<std::size_t>(), im.at("height").get<std::size_t>(),
               im.at("width").get<std::size_t>()};
    c.classes_first_task = j.at("classes_first_task").get<std::size_t>();
    c.layer_norm_eps = j.at("layer_norm_eps").get<double>();
    return c;
}

json manifest_json(const CheckpointManifest& m) {
    return {{"kind", m.kind == CheckpointKind::base ? "base" : "adapter"},
            {"task_id", m.task_id},
            {"config", config_json(m.config)},
            {"kernel_size", m.kernel_size},
            {"gate_mode", std::string(to_string(m.gate_mode))},
            {"classes", m.classes},
            {"normalization", {{"mean", m.normalization.mean}, {"stddev", m.normalization.stddev}}},
            {"frozen", m.frozen},
            {"run_config", m.run_config}};
}

CheckpointManifest manifest_from_json(const json& j) {
    CheckpointManifest m;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "base") {
        m.kind = CheckpointKind::base;
    } else if (kind == "adapter") {
        m.kind = CheckpointKind::adapter;
    } else {
        fail(ErrorCode::format, "unknown checkpoint kind '" + kind + "'");
    }
    m.task_id = j.at("task_id").get<int>();
    m.config = config_from_json(j.at("config"));
    m.kernel_size = j.at("kernel_size").get<std::size_t>();
    m.gate_mode = parse_gate_mode(j.at("gate_mode").get<std::string>());
    m.classes = j.at("classes").get<std::vector<int>>();
    m.normalization.mean = j.at("normalization").at("mean").get<std::vector<float>>();
    m.normalization.stddev = j.at("normalization").at("stddev").get<std::vector<float>>();
    m.frozen = j.at("frozen").get<bool>();
    m.run_config = j.at("run_config").get<std::string>();
    return m;
}

// Copies values from `loaded` into `target`, requiring the same names and shapes.
void assign_tensors(const std::vector<NamedTensor<float>>& target, const std::vector<NamedTensor<float>>& loaded,
                    const std::filesystem::path& path) {
    std::map<std::string, const Tensor<float>*> by_name;
    for (const auto& nt : loaded) {
        if (!by_name.emplace(nt.name, &nt.tensor).second) {
            fail(ErrorCode::format, path.string() + ": duplicate tensor '" + nt.name + "'");
        }
    }
    if (by_name.size() != target.size()) {
        fail(ErrorCode::format, path.string() + ": expected " + std::to_string(target.size()) + " tensors, found " +
                                    std::to_string(by_name.size()));
    }
    for (const auto& nt : target) {
        const auto it = by_name.find(nt.name);
        if (it == by_name.end()) fail(ErrorCode::format, path.string() + ": missing tensor '" + nt.name + "'");
        if (it->second->shape() != nt.tensor.shape()) {
            fail(ErrorCode::config_mismatch, path.string() + ": tensor '" + nt.name + "' has shape " +
                                                 shape_to_string(it->second->shape()) + ", expected " +
                                                 shape_to_string(nt.tensor.shape()));
        }
        Tensor<float> dst = nt.tensor;
        std::copy(it->second->values().begin(), it->second->values().end(), dst.data().begin());
    }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const CheckpointManifest& manifest,
                      const std::vector<NamedTensor<float>>& tensors) {
    std::vector<unsigned char> out(kMagic, kMagic + 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    const std::string text = manifest_json(manifest).dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& nt : tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(nt.name.size()));
        out.insert(out.end(), nt.name.begin(), nt.name.end());
        put<std::uint8_t>(out, kDtypeF32);
        put<std::uint8_t>(out, static_cast<std::uint8_t>(nt.tensor.rank()));
        for (std::size_t d : nt.tensor.shape()) put<std::uint64_t>(out, d);
        for (float v : nt.tensor.values()) put<float>(out, v);
    }

    const std::filesystem::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorCode::io, "cannot write " + tmp.string());
        f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
        f.flush();
        if (!f) fail(ErrorCode::io, "short write to " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp);
        fail(ErrorCode::io, "cannot move checkpoint into place at " + path.string() + ": " + ec.message());
    }
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) fail(ErrorCode::io, "cannot open " + path.string());
    const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};

    Reader r{bytes, path};
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        fail(ErrorCode::bad_magic, path.string() + " is not a checkpoint");
    }
    r.offset = 4;
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        fail(ErrorCode::version_mismatch, path.string() + ": format version " + std::to_string(version) +
                                              ", this build reads version " + std::to_string(kCheckpointVersion));
    }
    const auto manifest_len = r.get<std::uint32_t>("manifest length");
    const std::string text = r.string(manifest_len, "manifest");

    CheckpointFile file;
    try {
        file.manifest = manifest_from_json(json::parse(text));
    } catch (const json::exception& e) {
        fail(ErrorCode::format, path.string() + ": malformed manifest: " + e.what());
    }

    const auto count = r.get<std::uint32_t>("record count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.get<std::uint32_t>("record name length");
        std::string name = r.string(name_len, "record name");
        const auto dtype = r.get<std::uint8_t>("dtype");
        if (dtype != kDtypeF32) {
            fail(ErrorCode::format, path.string() + ": tensor '" + name + "' has unknown dtype code " + std::to_string(dtype));
        }
        const auto rank = r.get<std::uint8_t>("rank");
        Shape shape;
        for (std::uint8_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>("dims")));
        const std::size_t n = shape_numel(shape);
        r.need(n * sizeof(float), "payload");
        std::vector<float> data(n);
        std::memcpy(data.data(), bytes.data() + r.offset, n * sizeof(float));
        r.offset += n * sizeof(float);
        file.tensors.push_back({std::move(name), Tensor<float>(std::move(shape), std::move(data))});
    }
    if (r.offset != bytes.size()) {
        fail(ErrorCode::format, path.string() + ": " + std::to_string(bytes.size() - r.offset) + " trailing bytes");
    }
    return file;
}

void save_backbone(const Backbone<float>& backbone, const std::filesystem::path& path, const std::string& run_config) {
    CheckpointManifest m;
    m.kind = CheckpointKind::base;
    m.task_id = 1;
    m.config = backbone.config();
    m.classes = backbone.classes();
    m.normalization = backbone.normalization();
    m.frozen = backbone.frozen();
    m.run_config = run_config;
    write_checkpoint(path, m, backbone.named_parameters());
}

Backbone<float> load_backbone(const std::filesystem::path& path) {
    CheckpointFile file = read_checkpoint(path);
    const CheckpointManifest& m = file.manifest;
    if (m.kind != CheckpointKind::base) fail(ErrorCode::usage, path.string() + " holds an adapter, not a base model");
    CctWeights<float> weights = allocate_weights<float>(m.config, m.classes.size());
    assign_tensors(named_tensors(weights), file.tensors, path);
    Backbone<float> backbone(m.config, std::move(weights), m.normalization, m.classes);
    if (m.frozen) backbone.freeze();
    return backbone;
}

void save_adapter(const TaskAdapter<float>& adapter, const std::filesystem::path& path) {
    CheckpointManifest m;
    m.kind = CheckpointKind::adapter;
    m.task_id = adapter.task_id;
    m.config = adapter.config;
    m.kernel_size = adapter.kernel_size;
    m.gate_mode = adapter.gate_mode;
    m.classes = adapter.classes;
    m.normalization = InputNormalization::identity(adapter.config.image.channels);
    write_checkpoint(path, m, adapter.named_parameters());
}

TaskAdapter<float> load_adapter(const std::filesystem::path& path) {
    CheckpointFile file = read_checkpoint(path);
    const CheckpointManifest& m = file.manifest;
    if (m.kind != CheckpointKind::adapter) fail(ErrorCode::usage, path.string() + " holds a base model, not an adapter");
    m.config.validate();
    TaskAdapter<float> a;
    a.task_id = m.task_id;
    a.kernel_size = m.kernel_size;
    a.gate_mode = m.gate_mode;
    a.config = m.config;
    a.classes = m.classes;
    const std::size_t d = m.config.embed_dim, k = m.kernel_size;
    auto ln = [d] { return LayerNormWeights<float>{Tensor<float>::zeros({d}, true), Tensor<float>::zeros({d}, true)}; };
    for (std::size_t l = 0; l < m.config.layers; ++l) {
        AdapterLayer<float> layer;
        for (std::size_t h = 0; h < m.config.heads; ++h) {
            for (auto* v : {&layer.query_kernel, &layer.key_kernel, &layer.value_kernel}) {
                v->push_back(Tensor<float>::zeros({k, k}, true));
            }
            for (auto* v : {&layer.query_gate, &layer.key_gate, &layer.value_gate}) {
                v->push_back(Tensor<float>::zeros({1}, true));
            }
        }
        layer.norm1 = ln();
        layer.norm2 = ln();
        a.layers.push_back(std::move(layer));
    }
    a.final_norm = ln();
    a.pool = {Tensor<float>::zeros({d, 1}, true), Tensor<float>::zeros({1}, true)};
    a.head = {Tensor<float>::zeros({d, a.classes.size()}, true), Tensor<float>::zeros({a.classes.size()}, true)};
    assign_tensors(a.named_parameters(), file.tensors, path);
    return a;
}

TaskAdapter<float> load_adapter(const std::filesystem::path& path, const Backbone<float>& backbone) {
    TaskAdapter<float> a = load_adapter(path);
    check_compatible(backbone, a);
    return a;
}

std::vector<TaskAdapter<float>> load_adapter_dir(const std::filesystem::path& dir, const Backbone<float>& backbone) {
    if (!std::filesystem::is_directory(dir)) fail(ErrorCode::io, "adapter directory " + dir.string() + " not found");
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file()) files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<TaskAdapter<float>> adapters;
    for (const auto& file : files) {
        std::ifstream f(file, std::ios::binary);
        char magic[4] = {};
        f.read(magic, 4);
        if (!f || std::memcmp(magic, kMagic, 4) != 0) continue;
        f.close();
        if (read_checkpoint(file).manifest.kind != CheckpointKind::adapter) continue;
        adapters.push_back(load_adapter(file, backbone));
    }
    std::sort(adapters.begin(), adapters.end(), [](const auto& a, const auto& b) { return a.task_id < b.task_id; });
    for (std::size_t i = 1; i < adapters.size(); ++i) {
        if (adapters[i].task_id == adapters[i - 1].task_id) {
            fail(ErrorCode::config, "two adapters for task " + std::to_string(adapters[i].task_id) + " in " + dir.string());
        }
    }
    return adapters;
}

}  // namespace contracon
