#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "contracon/classifier.h"

namespace contracon {

// Magnitudes of the ten test-time views. Defaults are the fixed values this
// toolkit ships with; they are recorded in the run config.
struct AugmentationParams {
    double contrast = 1.5;
    std::size_t translate_divisor = 8;  // shift = ceil(extent / divisor)
    double sharpness = 2.0;
    std::size_t equalize_bins = 256;
    std::size_t posterize_bits = 4;
    double brightness = 1.3;
    double brightness_strong = 1.6;
    double sharpness_strong = 3.0;
};

enum class ViewKind {
    contrast,
    translate_x,
    translate_y,
    sharpness,
    equalize,
    invert,
    posterize,
    brightness,
    brightness_strong,
    sharpness_strong,
};

inline constexpr std::size_t kDefaultViewCount = 10;

std::string_view to_string(ViewKind kind);

// Contrast about the per-channel mean, clamped to [0,1].
Image adjust_contrast(const Image& image, double factor);
// Shifts content by (dx, dy) pixels; vacated pixels are zero.
Image translate(const Image& image, std::ptrdiff_t dx, std::ptrdiff_t dy);
// p + (factor - 1) * (p - box3(p)), clamped. box3 averages the in-bounds
// 3×3 neighborhood.
Image adjust_sharpness(const Image& image, double factor);
// Per-channel histogram equalization over 8-bit quantized values.
Image equalize(const Image& image, std::size_t bins = 256);
Image invert(const Image& image);
// Keeps the top `bits` bits of the 8-bit quantized value.
Image posterize(const Image& image, std::size_t bits);
Image adjust_brightness(const Image& image, double factor);

Image apply_view(const Image& image, ViewKind kind, const AugmentationParams& params);

// The ten default views in fixed order when `count` == 10. Other counts take
// a seeded sample (count < 10) or cycle through the list (count > 10).
// Throws a data error when a pixel lies outside [0,1].
std::vector<Image> augment_views(const Image& image, std::size_t count, const AugmentationParams& params,
                                 std::uint64_t seed);

std::vector<ViewKind> view_schedule(std::size_t count, std::uint64_t seed);

}  // namespace contracon
