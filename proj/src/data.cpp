#include "contracon/data.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>

#include "contracon/error.h"

namespace contracon {

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "short write to " + path.string());
}

struct ByteReader {
    const std::vector<unsigned char>& bytes;
    const std::filesystem::path& path;
    std::size_t offset = 0;

    std::uint32_t be32(const char* what) {
        if (offset + 4 > bytes.size()) {
            fail(ErrorCode::format, path.string() + ": truncated " + what + " at offset " + std::to_string(offset));
        }
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes[offset + i];
        offset += 4;
        return v;
    }
};

void put_be32(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<unsigned char>((v >> shift) & 0xFF));
}

}  // namespace

void Dataset::validate() const {
    if (images.size() != labels.size()) {
        fail(ErrorCode::data, std::to_string(images.size()) + " images but " + std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < images.size(); ++i) {
        const Image& im = images[i];
        if (im.channels != images.front().channels || im.height != images.front().height ||
            im.width != images.front().width || im.pixels.size() != im.channels * im.height * im.width) {
            fail(ErrorCode::data, "image " + std::to_string(i) + " has inconsistent dimensions");
        }
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) {
            fail(ErrorCode::data, "label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                                      " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    for (std::size_t i : indices) {
        out.images.push_back(images.at(i));
        out.labels.push_back(labels.at(i));
    }
    return out;
}

InputNormalization channel_statistics(std::span<const Image> images) {
    if (images.empty()) fail(ErrorCode::data, "cannot compute statistics of an empty set");
    const std::size_t c = images.front().channels;
    const std::size_t plane = images.front().height * images.front().width;
    std::vector<double> sum(c, 0.0), sq(c, 0.0);
    for (const Image& im : images) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t i = 0; i < plane; ++i) {
                const double p = im.pixels[ch * plane + i];
                sum[ch] += p;
                sq[ch] += p * p;
            }
        }
    }
    InputNormalization norm;
    const double n = static_cast<double>(images.size() * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
        const double mu = sum[ch] / n;
        const double var = std::max(sq[ch] / n - mu * mu, 0.0);
        norm.mean.push_back(static_cast<float>(mu));
        norm.stddev.push_back(static_cast<float>(std::max(std::sqrt(var), 1e-6)));
    }
    return norm;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto ib = read_file(images_path);
    const auto lb = read_file(labels_path);

    ByteReader ir{ib, images_path};
    const std::uint32_t imagic = ir.be32("magic");
    if (imagic != 0x00000803) {
        fail(ErrorCode::format, images_path.string() + ": bad image magic at offset 0");
    }
    const std::size_t n = ir.be32("count");
    const std::size_t rows = ir.be32("rows");
    const std::size_t cols = ir.be32("cols");
    if (rows == 0 || cols == 0) fail(ErrorCode::format, images_path.string() + ": zero image extent at offset 8");
    const std::size_t need = ir.offset + n * rows * cols;
    if (ib.size() < need) {
        fail(ErrorCode::format, images_path.string() + ": truncated pixel data at offset " + std::to_string(ib.size()) +
                                    ", expected " + std::to_string(need) + " bytes");
    }

    ByteReader lr{lb, labels_path};
    if (lr.be32("magic") != 0x00000801) {
        fail(ErrorCode::format, labels_path.string() + ": bad label magic at offset 0");
    }
    const std::size_t nl = lr.be32("count");
    if (nl != n) {
        fail(ErrorCode::format, labels_path.string() + ": label count " + std::to_string(nl) + " at offset 4 != image count " +
                                    std::to_string(n));
    }
    if (lb.size() < lr.offset + n) {
        fail(ErrorCode::format, labels_path.string() + ": truncated labels at offset " + std::to_string(lb.size()));
    }

    Dataset ds;
    int max_label = -1;
    for (std::size_t i = 0; i < n; ++i) {
        Image im(1, rows, cols);
        const unsigned char* src = ib.data() + ir.offset + i * rows * cols;
        for (std::size_t p = 0; p < rows * cols; ++p) im.pixels[p] = static_cast<float>(src[p]) / 255.0f;
        ds.images.push_back(std::move(im));
        const int label = lb[lr.offset + i];
        ds.labels.push_back(label);
        max_label = std::max(max_label, label);
    }
    ds.num_classes = static_cast<std::size_t>(max_label + 1);
    return ds;
}

void write_idx(const Dataset& dataset, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    dataset.validate();
    if (dataset.images.empty()) fail(ErrorCode::data, "cannot write an empty dataset");
    const Image& first = dataset.images.front();
    if (first.channels != 1) fail(ErrorCode::data, "IDX output supports single-channel images only");
    if (dataset.num_classes > 256) fail(ErrorCode::data, "IDX labels are single bytes");

    std::vector<unsigned char> ib;
    put_be32(ib, 0x00000803);
    put_be32(ib, static_cast<std::uint32_t>(dataset.size()));
    put_be32(ib, static_cast<std::uint32_t>(first.height));
    put_be32(ib, static_cast<std::uint32_t>(first.width));
    for (const Image& im : dataset.images) {
        for (float p : im.pixels) {
            ib.push_back(static_cast<unsigned char>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)));
        }
    }
    std::vector<unsigned char> lb;
    put_be32(lb, 0x00000801);
    put_be32(lb, static_cast<std::uint32_t>(dataset.size()));
    for (int label : dataset.labels) lb.push_back(static_cast<unsigned char>(label));

    write_file(images_path, ib);
    write_file(labels_path, lb);
}

CifarVariant parse_cifar_variant(std::string_view name) {
    if (name == "cifar10") return CifarVariant::cifar10;
    if (name == "cifar100") return CifarVariant::cifar100;
    fail(ErrorCode::config, "unknown CIFAR variant '" + std::string(name) + "'");
}

Dataset load_cifar_binary(const std::filesystem::path& path, CifarVariant variant) {
    constexpr std::size_t kPixels = 3 * 32 * 32;
    const std::size_t label_bytes = variant == CifarVariant::cifar10 ? 1 : 2;
    const std::size_t record = label_bytes + kPixels;
    const auto bytes = read_file(path);
    if (bytes.empty() || bytes.size() % record != 0) {
        fail(ErrorCode::format, path.string() + ": size " + std::to_string(bytes.size()) +
                                    " is not a multiple of the record size " + std::to_string(record));
    }
    Dataset ds;
    ds.num_classes = variant == CifarVariant::cifar10 ? 10 : 100;
    for (std::size_t offset = 0; offset < bytes.size(); offset += record) {
        const int label = bytes[offset + label_bytes - 1];
        if (static_cast<std::size_t>(label) >= ds.num_classes) {
            fail(ErrorCode::format, path.string() + ": label " + std::to_string(label) + " at offset " +
                                        std::to_string(offset + label_bytes - 1));
        }
        Image im(3, 32, 32);
        for (std::size_t p = 0; p < kPixels; ++p) im.pixels[p] = static_cast<float>(bytes[offset + label_bytes + p]) / 255.0f;
        ds.images.push_back(std::move(im));
        ds.labels.push_back(label);
    }
    return ds;
}

std::vector<Image> synth_templates(const SynthSpec& spec) {
    if (spec.classes == 0 || spec.height == 0 || spec.width == 0 || spec.channels == 0) {
        fail(ErrorCode::config, "synthetic spec needs positive classes and image extents");
    }
    const std::size_t n = spec.channels * spec.height * spec.width;
    if (spec.classes >= n) fail(ErrorCode::config, "too many synthetic classes for the image size");
    Rng rng(spec.template_seed);
    const double h = static_cast<double>(spec.height), w = static_cast<double>(spec.width);
    // Smooth random fields (sums of signed Gaussian blobs), made zero-mean and
    // mutually orthogonal so no class pattern projects onto another.
    std::vector<std::vector<double>> basis;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        std::vector<double> f(n, 0.0);
        for (std::size_t ch = 0; ch < spec.channels; ++ch) {
            for (int b = 0; b < 4; ++b) {
                const double cy = rng.uniform(0.0, h), cx = rng.uniform(0.0, w);
                const double sigma = rng.uniform(0.1, 0.25) * std::min(h, w);
                const double amp = rng.bernoulli(0.5) ? 1.0 : -1.0;
                for (std::size_t y = 0; y < spec.height; ++y) {
                    for (std::size_t x = 0; x < spec.width; ++x) {
                        const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                        f[(ch * spec.height + y) * spec.width + x] += amp * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    }
                }
            }
        }
        const double mu = std::accumulate(f.begin(), f.end(), 0.0) / static_cast<double>(n);
        for (double& v : f) v -= mu;
        for (const auto& q : basis) {
            const double dot = std::inner_product(f.begin(), f.end(), q.begin(), 0.0);
            for (std::size_t i = 0; i < n; ++i) f[i] -= dot * q[i];
        }
        const double norm = std::sqrt(std::inner_product(f.begin(), f.end(), f.begin(), 0.0));
        for (double& v : f) v /= norm;
        basis.push_back(std::move(f));
    }
    std::vector<Image> templates;
    for (const auto& f : basis) {
        double peak = 0.0;
        for (double v : f) peak = std::max(peak, std::abs(v));
        Image t(spec.channels, spec.height, spec.width);
        for (std::size_t i = 0; i < n; ++i) t.pixels[i] = static_cast<float>(0.5 + 0.4 * f[i] / peak);
        templates.push_back(std::move(t));
    }
    return templates;
}

Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed) {
    if (!(spec.separation > 0.0)) fail(ErrorCode::config, "synthetic separation must be positive");
    const auto templates = synth_templates(spec);
    const double noise = std::isinf(spec.separation) ? 0.0 : 1.0 / spec.separation;
    Rng rng(seed);
    Dataset ds;
    ds.num_classes = spec.classes;
    for (std::size_t c = 0; c < spec.classes; ++c) {
        for (std::size_t s = 0; s < spec.samples_per_class; ++s) {
            Image im = templates[c];
            if (noise > 0.0) {
                for (float& p : im.pixels) p = static_cast<float>(std::clamp(p + rng.normal(0.0, noise), 0.0, 1.0));
            }
            ds.images.push_back(std::move(im));
            ds.labels.push_back(static_cast<int>(c));
        }
    }
    return ds;
}

SplitOrder parse_split_order(std::string_view name) {
    if (name == "given") return SplitOrder::given;
    if (name == "shuffled") return SplitOrder::shuffled;
    if (name == "reversed") return SplitOrder::reversed;
    fail(ErrorCode::config, "unknown split order '" + std::string(name) + "'");
}

std::string_view to_string(SplitOrder order) {
    switch (order) {
        case SplitOrder::given: return "given";
        case SplitOrder::shuffled: return "shuffled";
        case SplitOrder::reversed: return "reversed";
    }
    return "given";
}

std::vector<std::vector<int>> partition_classes(std::size_t num_classes, std::size_t num_tasks, std::uint64_t seed,
                                                SplitOrder order) {
    if (num_tasks == 0 || num_classes == 0 || num_classes % num_tasks != 0) {
        fail(ErrorCode::config, std::to_string(num_classes) + " classes cannot be split into " +
                                    std::to_string(num_tasks) + " equal tasks");
    }
    std::vector<int> ids(num_classes);
    std::iota(ids.begin(), ids.end(), 0);
    if (order == SplitOrder::shuffled) {
        Rng rng(seed);
        rng.shuffle(ids);
    }
    const std::size_t per = num_classes / num_tasks;
    std::vector<std::vector<int>> sets;
    for (std::size_t t = 0; t < num_tasks; ++t) sets.emplace_back(ids.begin() + t * per, ids.begin() + (t + 1) * per);
    if (order == SplitOrder::reversed) std::reverse(sets.begin(), sets.end());
    return sets;
}

TaskSplit make_splits(const Dataset& train, const Dataset& test, std::size_t num_tasks, std::uint64_t seed,
                      SplitOrder order) {
    if (train.num_classes != test.num_classes) {
        fail(ErrorCode::data, "train and test sets declare different class counts");
    }
    TaskSplit split;
    split.seed = seed;
    split.order = order;
    split.classes = partition_classes(train.num_classes, num_tasks, seed, order);
    std::vector<std::size_t> task_of(train.num_classes);
    for (std::size_t t = 0; t < split.classes.size(); ++t) {
        for (int c : split.classes[t]) task_of[static_cast<std::size_t>(c)] = t;
    }
    split.train.resize(num_tasks);
    split.test.resize(num_tasks);
    for (std::size_t i = 0; i < train.size(); ++i) split.train[task_of.at(static_cast<std::size_t>(train.labels[i]))].push_back(i);
    for (std::size_t i = 0; i < test.size(); ++i) split.test[task_of.at(static_cast<std::size_t>(test.labels[i]))].push_back(i);
    return split;
}

TaskData task_data(const Dataset& dataset, std::span<const std::size_t> indices, std::vector<int> classes) {
    TaskData out;
    for (std::size_t i : indices) {
        const int global = dataset.labels.at(i);
        const auto it = std::find(classes.begin(), classes.end(), global);
        if (it == classes.end()) {
            fail(ErrorCode::data, "sample " + std::to_string(i) + " has class " + std::to_string(global) +
                                      " outside the task's class set");
        }
        out.images.push_back(dataset.images[i]);
        out.labels.push_back(static_cast<int>(it - classes.begin()));
    }
    out.classes = std::move(classes);
    return out;
}

TransformDraw draw_transform(Rng& rng, const TrainAugment& augment) {
    TransformDraw d;
    d.dx = rng.uniform_index(2 * augment.pad + 1);
    d.dy = rng.uniform_index(2 * augment.pad + 1);
    d.flip = augment.flip && rng.bernoulli(0.5);
    return d;
}

Image reflect_pad(const Image& image, std::size_t pad) {
    if (pad >= image.height || pad >= image.width) fail(ErrorCode::config, "reflect padding exceeds image extent");
    Image out(image.channels, image.height + 2 * pad, image.width + 2 * pad);
    const auto reflect = [](std::ptrdiff_t i, std::ptrdiff_t n) {
        if (i < 0) return -i;
        if (i >= n) return 2 * (n - 1) - i;
        return i;
    };
    const auto H = static_cast<std::ptrdiff_t>(image.height), W = static_cast<std::ptrdiff_t>(image.width);
    const auto P = static_cast<std::ptrdiff_t>(pad);
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::ptrdiff_t y = 0; y < H + 2 * P; ++y) {
            for (std::ptrdiff_t x = 0; x < W + 2 * P; ++x) {
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                    image.at(c, static_cast<std::size_t>(reflect(y - P, H)), static_cast<std::size_t>(reflect(x - P, W)));
            }
        }
    }
    return out;
}

Image crop(const Image& image, std::size_t y0, std::size_t x0, std::size_t height, std::size_t width) {
    if (y0 + height > image.height || x0 + width > image.width) fail(ErrorCode::shape, "crop window outside image");
    Image out(image.channels, height, width);
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = image.at(c, y0 + y, x0 + x);
        }
    }
    return out;
}

Image hflip(const Image& image) {
    Image out(image.channels, image.height, image.width);
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::size_t y = 0; y < image.height; ++y) {
            for (std::size_t x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
        }
    }
    return out;
}

Image apply_transform(const Image& image, const TransformDraw& draw, const TrainAugment& augment) {
    Image out = augment.pad > 0 ? crop(reflect_pad(image, augment.pad), draw.dy, draw.dx, image.height, image.width) : image;
    return draw.flip ? hflip(out) : out;
}

Image train_transform(const Image& image, Rng& rng, const TrainAugment& augment) {
    if (!augment.enabled) return image;
    return apply_transform(image, draw_transform(rng, augment), augment);
}

}  // namespace contracon
