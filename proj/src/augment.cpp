#include "contracon/augment.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "contracon/error.h"
#include "contracon/random.h"

namespace contracon {

namespace {

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

int quantize8(float p) { return static_cast<int>(std::lround(std::clamp(p, 0.0f, 1.0f) * 255.0f)); }

Image box_blur3(const Image& image) {
    Image out(image.channels, image.height, image.width);
    const auto H = static_cast<std::ptrdiff_t>(image.height), W = static_cast<std::ptrdiff_t>(image.width);
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::ptrdiff_t y = 0; y < H; ++y) {
            for (std::ptrdiff_t x = 0; x < W; ++x) {
                double total = 0.0;
                int count = 0;
                for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
                    for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
                        const std::ptrdiff_t yy = y + dy, xx = x + dx;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        total += image.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx));
                        ++count;
                    }
                }
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = static_cast<float>(total / count);
            }
        }
    }
    return out;
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

}  // namespace

std::string_view to_string(ViewKind kind) {
    switch (kind) {
        case ViewKind::contrast: return "contrast";
        case ViewKind::translate_x: return "translate_x";
        case ViewKind::translate_y: return "translate_y";
        case ViewKind::sharpness: return "sharpness";
        case ViewKind::equalize: return "equalize";
        case ViewKind::invert: return "invert";
        case ViewKind::posterize: return "posterize";
        case ViewKind::brightness: return "brightness";
        case ViewKind::brightness_strong: return "brightness_strong";
        case ViewKind::sharpness_strong: return "sharpness_strong";
    }
    return "unknown";
}

Image adjust_contrast(const Image& image, double factor) {
    Image out = image;
    const std::size_t plane = image.height * image.width;
    for (std::size_t c = 0; c < image.channels; ++c) {
        const float* src = image.pixels.data() + c * plane;
        const double mu = std::accumulate(src, src + plane, 0.0) / static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) out.pixels[c * plane + i] = clamp01(mu + factor * (src[i] - mu));
    }
    return out;
}

Image translate(const Image& image, std::ptrdiff_t dx, std::ptrdiff_t dy) {
    Image out(image.channels, image.height, image.width, 0.0f);
    const auto H = static_cast<std::ptrdiff_t>(image.height), W = static_cast<std::ptrdiff_t>(image.width);
    for (std::size_t c = 0; c < image.channels; ++c) {
        for (std::ptrdiff_t y = 0; y < H; ++y) {
            const std::ptrdiff_t sy = y - dy;
            if (sy < 0 || sy >= H) continue;
            for (std::ptrdiff_t x = 0; x < W; ++x) {
                const std::ptrdiff_t sx = x - dx;
                if (sx < 0 || sx >= W) continue;
                out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) =
                    image.at(c, static_cast<std::size_t>(sy), static_cast<std::size_t>(sx));
            }
        }
    }
    return out;
}

Image adjust_sharpness(const Image& image, double factor) {
    const Image blurred = box_blur3(image);
    Image out = image;
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const double p = image.pixels[i];
        out.pixels[i] = clamp01(p + (factor - 1.0) * (p - blurred.pixels[i]));
    }
    return out;
}

Image equalize(const Image& image, std::size_t bins) {
    if (bins != 256) fail(ErrorCode::config, "equalize supports 256 bins only");
    Image out = image;
    const std::size_t plane = image.height * image.width;
    for (std::size_t c = 0; c < image.channels; ++c) {
        std::vector<std::size_t> hist(256, 0);
        for (std::size_t i = 0; i < plane; ++i) ++hist[quantize8(image.pixels[c * plane + i])];
        std::vector<std::size_t> cdf(256);
        std::partial_sum(hist.begin(), hist.end(), cdf.begin());
        const std::size_t cdf_min = *std::find_if(cdf.begin(), cdf.end(), [](std::size_t v) { return v > 0; });
        if (cdf_min == plane) continue;  // constant channel
        for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t v = cdf[quantize8(image.pixels[c * plane + i])];
            const double mapped = std::round(static_cast<double>(v - cdf_min) * 255.0 / static_cast<double>(plane - cdf_min));
            out.pixels[c * plane + i] = static_cast<float>(mapped / 255.0);
        }
    }
    return out;
}

Image invert(const Image& image) {
    Image out = image;
    for (float& p : out.pixels) p = 1.0f - p;
    return out;
}

Image posterize(const Image& image, std::size_t bits) {
    if (bits == 0 || bits > 8) fail(ErrorCode::config, "posterize bits must be in [1,8]");
    const int mask = (0xFF << (8 - bits)) & 0xFF;
    Image out = image;
    for (float& p : out.pixels) p = static_cast<float>((quantize8(p) & mask) / 255.0);
    return out;
}

Image adjust_brightness(const Image& image, double factor) {
    Image out = image;
    for (float& p : out.pixels) p = clamp01(p * factor);
    return out;
}

Image apply_view(const Image& image, ViewKind kind, const AugmentationParams& params) {
    const auto shift_x = static_cast<std::ptrdiff_t>(ceil_div(image.width, params.translate_divisor));
    const auto shift_y = static_cast<std::ptrdiff_t>(ceil_div(image.height, params.translate_divisor));
    switch (kind) {
        case ViewKind::contrast: return adjust_contrast(image, params.contrast);
        case ViewKind::translate_x: return translate(image, shift_x, 0);
        case ViewKind::translate_y: return translate(image, 0, shift_y);
        case ViewKind::sharpness: return adjust_sharpness(image, params.sharpness);
        case ViewKind::equalize: return equalize(image, params.equalize_bins);
        case ViewKind::invert: return invert(image);
        case ViewKind::posterize: return posterize(image, params.posterize_bits);
        case ViewKind::brightness: return adjust_brightness(image, params.brightness);
        case ViewKind::brightness_strong: return adjust_brightness(image, params.brightness_strong);
        case ViewKind::sharpness_strong: return adjust_sharpness(image, params.sharpness_strong);
    }
    return image;
}

std::vector<ViewKind> view_schedule(std::size_t count, std::uint64_t seed) {
    std::vector<ViewKind> all;
    for (std::size_t i = 0; i < kDefaultViewCount; ++i) all.push_back(static_cast<ViewKind>(i));
    if (count == kDefaultViewCount) return all;
    std::vector<ViewKind> out;
    if (count > kDefaultViewCount) {
        for (std::size_t i = 0; i < count; ++i) out.push_back(all[i % kDefaultViewCount]);
        return out;
    }
    Rng rng(seed);
    std::vector<std::size_t> order(kDefaultViewCount);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    order.resize(count);
    std::sort(order.begin(), order.end());
    for (std::size_t i : order) out.push_back(all[i]);
    return out;
}

std::vector<Image> augment_views(const Image& image, std::size_t count, const AugmentationParams& params,
                                 std::uint64_t seed) {
    if (count == 0) fail(ErrorCode::config, "num_augmentations must be at least 1");
    if (image.pixels.size() != image.channels * image.height * image.width || image.pixels.empty()) {
        fail(ErrorCode::data, "image buffer does not match its dimensions");
    }
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        const float p = image.pixels[i];
        if (!(p >= 0.0f && p <= 1.0f)) {
            fail(ErrorCode::data, "pixel " + std::to_string(i) + " = " + std::to_string(p) + " outside [0,1]");
        }
    }
    std::vector<Image> views;
    for (ViewKind kind : view_schedule(count, seed)) views.push_back(apply_view(image, kind, params));
    return views;
}

}  // namespace contracon
