#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string_view>
#include <vector>

#include "contracon/classifier.h"
#include "contracon/random.h"

namespace contracon {

struct Dataset {
    std::vector<Image> images;
    std::vector<int> labels;  // global class ids
    std::size_t num_classes = 0;

    std::size_t size() const { return images.size(); }
    // Throws a data error on ragged images or labels outside [0, num_classes).
    void validate() const;
    Dataset subset(std::span<const std::size_t> indices) const;
};

// Per-channel mean and population standard deviation over every pixel.
InputNormalization channel_statistics(std::span<const Image> images);

// MNIST-style IDX pair: u8 images (magic 0x00000803, dims n, rows, cols) and
// u8 labels (magic 0x00000801, dim n). Pixels map to v / 255.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
// Single-channel datasets only; pixels are stored as round(p * 255).
void write_idx(const Dataset& dataset, const std::filesystem::path& images, const std::filesystem::path& labels);

enum class CifarVariant { cifar10, cifar100 };

CifarVariant parse_cifar_variant(std::string_view name);

// Records of [label][3072 pixels] (cifar10) or [coarse][fine][3072 pixels]
// (cifar100, fine label kept). Planes are R, G, B, each 32×32 row-major.
Dataset load_cifar_binary(const std::filesystem::path& path, CifarVariant variant);

struct SynthSpec {
    std::size_t classes = 2;
    std::size_t samples_per_class = 100;
    std::size_t channels = 1;
    std::size_t height = 16;
    std::size_t width = 16;
    // Pixel noise std is 1 / separation; infinity gives noiseless templates.
    double separation = 5.0;
    // Templates depend only on this seed, so train and test sets drawn with
    // different sample seeds share class identities.
    std::uint64_t template_seed = 0;
};

// Class c is template_c plus Gaussian noise, clamped to [0,1]. Samples are
// ordered class by class.
Dataset synth_dataset(const SynthSpec& spec, std::uint64_t seed);
std::vector<Image> synth_templates(const SynthSpec& spec);

enum class SplitOrder { given, shuffled, reversed };

SplitOrder parse_split_order(std::string_view name);
std::string_view to_string(SplitOrder order);

struct TaskSplit {
    std::vector<std::vector<int>> classes;          // C^1..C^T, global ids
    std::vector<std::vector<std::size_t>> train;    // per-task indices into the train set
    std::vector<std::vector<std::size_t>> test;     // per-task indices into the test set
    std::uint64_t seed = 0;
    SplitOrder order = SplitOrder::given;

    std::size_t num_tasks() const { return classes.size(); }
};

// Partitions class ids 0..num_classes-1 into T equal disjoint sets.
// Throws a configuration error unless num_classes is divisible by T.
std::vector<std::vector<int>> partition_classes(std::size_t num_classes, std::size_t num_tasks, std::uint64_t seed,
                                                SplitOrder order);

TaskSplit make_splits(const Dataset& train, const Dataset& test, std::size_t num_tasks, std::uint64_t seed,
                      SplitOrder order);

// The samples of one task with labels remapped to local head indices.
struct TaskData {
    std::vector<Image> images;
    std::vector<int> labels;   // 0..classes.size()-1
    std::vector<int> classes;  // local index -> global id

    std::size_t size() const { return images.size(); }
};

TaskData task_data(const Dataset& dataset, std::span<const std::size_t> indices, std::vector<int> classes);

// Reflect-pad, random crop back to the original size, random horizontal flip.
struct TrainAugment {
    bool enabled = false;
    std::size_t pad = 4;
    bool flip = true;
};

struct TransformDraw {
    std::size_t dx = 0;
    std::size_t dy = 0;
    bool flip = false;
};

TransformDraw draw_transform(Rng& rng, const TrainAugment& augment);
Image reflect_pad(const Image& image, std::size_t pad);
Image crop(const Image& image, std::size_t y, std::size_t x, std::size_t height, std::size_t width);
Image hflip(const Image& image);
Image apply_transform(const Image& image, const TransformDraw& draw, const TrainAugment& augment);
// Identity when augmentation is disabled (and no random draw is consumed).
Image train_transform(const Image& image, Rng& rng, const TrainAugment& augment);

}  // namespace contracon
