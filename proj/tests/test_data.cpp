#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "contracon/error.h"
#include "contracon/data.h"

using namespace contracon;
namespace fs = std::filesystem;

namespace {

class TempDir {
   public:
    TempDir() {
        path_ = fs::temp_directory_path() / ("contracon_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                             ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    fs::path operator/(const std::string& name) const { return path_ / name; }

   private:
    fs::path path_;
};

void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "no error thrown";
    return ErrorCode::usage;
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, unsigned char fill) {
    std::vector<unsigned char> b;
    put_be32(b, 0x00000803);
    put_be32(b, n);
    put_be32(b, rows);
    put_be32(b, cols);
    b.insert(b.end(), std::size_t(n) * rows * cols, fill);
    return b;
}

std::vector<unsigned char> idx_labels(std::vector<unsigned char> labels) {
    std::vector<unsigned char> b;
    put_be32(b, 0x00000801);
    put_be32(b, static_cast<std::uint32_t>(labels.size()));
    b.insert(b.end(), labels.begin(), labels.end());
    return b;
}

}  // namespace

TEST(Idx, HeaderAndPixels) {
    TempDir dir;
    auto img = idx_images(2, 28, 28, 255);
    img[16 + 5] = 0;
    write_bytes(dir / "img", img);
    write_bytes(dir / "lab", idx_labels({3, 7}));
    const Dataset ds = load_idx(dir / "img", dir / "lab");
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds.images[0].channels, 1u);
    EXPECT_EQ(ds.images[0].height, 28u);
    EXPECT_EQ(ds.images[0].width, 28u);
    EXPECT_EQ(ds.images[0].pixels[0], 1.0f);
    EXPECT_EQ(ds.images[0].pixels[5], 0.0f);
    EXPECT_EQ(ds.labels, (std::vector<int>{3, 7}));
}

TEST(Idx, MalformedFilesAreFormatErrors) {
    TempDir dir;
    write_bytes(dir / "img", idx_images(3, 4, 4, 9));
    write_bytes(dir / "lab2", idx_labels({1, 2}));
    EXPECT_EQ(code_of([&] { load_idx(dir / "img", dir / "lab2"); }), ErrorCode::format);

    auto bad_magic = idx_images(3, 4, 4, 9);
    bad_magic[3] = 0x04;
    write_bytes(dir / "bad", bad_magic);
    write_bytes(dir / "lab3", idx_labels({1, 2, 3}));
    EXPECT_EQ(code_of([&] { load_idx(dir / "bad", dir / "lab3"); }), ErrorCode::format);

    auto truncated = idx_images(3, 4, 4, 9);
    truncated.resize(truncated.size() - 1);
    write_bytes(dir / "short", truncated);
    try {
        load_idx(dir / "short", dir / "lab3");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::format);
        EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
    EXPECT_EQ(code_of([&] { load_idx(dir / "missing", dir / "lab3"); }), ErrorCode::io);
}

TEST(Idx, WriteThenReadRoundTrips) {
    TempDir dir;
    SynthSpec spec;
    spec.classes = 3;
    spec.samples_per_class = 4;
    spec.height = 5;
    spec.width = 6;
    Dataset ds = synth_dataset(spec, 1);
    for (auto& im : ds.images)
        for (float& p : im.pixels) p = std::round(p * 255.0f) / 255.0f;
    write_idx(ds, dir / "i", dir / "l");
    const Dataset back = load_idx(dir / "i", dir / "l");
    EXPECT_EQ(back.labels, ds.labels);
    for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t p = 0; p < ds.images[i].size(); ++p)
            EXPECT_NEAR(back.images[i].pixels[p], ds.images[i].pixels[p], 1e-6);
}

TEST(Cifar, RecordLayouts) {
    TempDir dir;
    std::vector<unsigned char> rec(3073, 0);
    rec[0] = 6;
    rec[1] = 255;          // red (0,0)
    rec[1 + 1024] = 128;   // green (0,0)
    rec[1 + 2048 + 33] = 64;  // blue (1,1)
    write_bytes(dir / "c10", rec);
    const Dataset c10 = load_cifar_binary(dir / "c10", CifarVariant::cifar10);
    ASSERT_EQ(c10.size(), 1u);
    EXPECT_EQ(c10.labels[0], 6);
    EXPECT_EQ(c10.images[0].at(0, 0, 0), 1.0f);
    EXPECT_FLOAT_EQ(c10.images[0].at(1, 0, 0), 128.0f / 255.0f);
    EXPECT_FLOAT_EQ(c10.images[0].at(2, 1, 1), 64.0f / 255.0f);

    std::vector<unsigned char> r100(3074 * 2, 0);
    r100[0] = 4;
    r100[1] = 42;
    r100[3074] = 9;
    r100[3075] = 77;
    write_bytes(dir / "c100", r100);
    const Dataset c100 = load_cifar_binary(dir / "c100", CifarVariant::cifar100);
    EXPECT_EQ(c100.labels, (std::vector<int>{42, 77}));

    rec.push_back(0);
    write_bytes(dir / "odd", rec);
    EXPECT_EQ(code_of([&] { load_cifar_binary(dir / "odd", CifarVariant::cifar10); }), ErrorCode::format);
}

TEST(Synth, DeterministicAndNoiselessTemplatesAreSeparable) {
    SynthSpec spec;
    spec.classes = 4;
    spec.samples_per_class = 5;
    const Dataset a = synth_dataset(spec, 3), b = synth_dataset(spec, 3);
    EXPECT_EQ(a.labels, b.labels);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.images[i], b.images[i]);

    spec.separation = std::numeric_limits<double>::infinity();
    const Dataset clean = synth_dataset(spec, 4);
    const auto templates = synth_templates(spec);
    for (std::size_t i = 0; i < clean.size(); ++i) EXPECT_EQ(clean.images[i], templates[std::size_t(clean.labels[i])]);
    std::set<std::vector<float>> distinct;
    for (const auto& t : templates) distinct.insert(t.pixels);
    EXPECT_EQ(distinct.size(), templates.size());
}

TEST(Synth, NearestTemplateOracleOn8x8) {
    SynthSpec spec;
    spec.classes = 2;
    spec.height = spec.width = 8;
    spec.samples_per_class = 500;
    spec.separation = 5.0;
    const auto templates = synth_templates(spec);
    const Dataset test = synth_dataset(spec, 99);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        std::size_t best = 0;
        double best_d = 1e300;
        for (std::size_t c = 0; c < templates.size(); ++c) {
            double d = 0;
            for (std::size_t p = 0; p < templates[c].size(); ++p) {
                const double diff = test.images[i].pixels[p] - templates[c].pixels[p];
                d += diff * diff;
            }
            if (d < best_d) best_d = d, best = c;
        }
        correct += int(best) == test.labels[i];
    }
    EXPECT_GE(double(correct) / double(test.size()), 0.99);
}

TEST(Synth, PixelsInUnitRangeAndSeparationValidated) {
    SynthSpec spec;
    spec.classes = 10;
    spec.separation = 1.0;
    for (const auto& im : synth_dataset(spec, 0).images)
        for (float p : im.pixels) {
            EXPECT_GE(p, 0.0f);
            EXPECT_LE(p, 1.0f);
        }
    spec.separation = 0.0;
    EXPECT_THROW(synth_dataset(spec, 0), Error);
}

TEST(Splits, PartitionProperties) {
    for (auto order : {SplitOrder::given, SplitOrder::shuffled, SplitOrder::reversed}) {
        const auto sets = partition_classes(100, 10, 5, order);
        ASSERT_EQ(sets.size(), 10u);
        std::set<int> all;
        for (const auto& s : sets) {
            EXPECT_EQ(s.size(), 10u);
            for (int c : s) EXPECT_TRUE(all.insert(c).second) << "class " << c << " appears twice";
        }
        EXPECT_EQ(all.size(), 100u);
        EXPECT_EQ(*all.begin(), 0);
        EXPECT_EQ(*all.rbegin(), 99);
    }
    EXPECT_EQ(partition_classes(100, 10, 5, SplitOrder::shuffled), partition_classes(100, 10, 5, SplitOrder::shuffled));
    auto given = partition_classes(20, 4, 1, SplitOrder::given);
    auto rev = partition_classes(20, 4, 1, SplitOrder::reversed);
    std::reverse(given.begin(), given.end());
    EXPECT_EQ(given, rev);
    EXPECT_THROW(partition_classes(10, 3, 0, SplitOrder::given), Error);
}

TEST(Splits, RandomPartitionsAreDisjointCovers) {
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t t = 1 + rng.uniform_index(10), per = 1 + rng.uniform_index(10);
        const auto sets = partition_classes(t * per, t, rng.next(), SplitOrder::shuffled);
        std::vector<int> flat;
        for (const auto& s : sets) flat.insert(flat.end(), s.begin(), s.end());
        std::sort(flat.begin(), flat.end());
        for (std::size_t i = 0; i < flat.size(); ++i) EXPECT_EQ(flat[i], int(i));
    }
}

TEST(Splits, TaskDataRemapsLabels) {
    SynthSpec spec;
    spec.classes = 6;
    spec.samples_per_class = 3;
    const Dataset train = synth_dataset(spec, 1), test = synth_dataset(spec, 2);
    const TaskSplit split = make_splits(train, test, 3, 7, SplitOrder::shuffled);
    ASSERT_EQ(split.num_tasks(), 3u);
    for (std::size_t t = 0; t < 3; ++t) {
        const TaskData td = task_data(train, split.train[t], split.classes[t]);
        EXPECT_EQ(td.size(), 6u);
        for (std::size_t i = 0; i < td.size(); ++i) {
            ASSERT_GE(td.labels[i], 0);
            ASSERT_LT(td.labels[i], 2);
            EXPECT_EQ(train.labels[split.train[t][i]], td.classes[std::size_t(td.labels[i])]);
        }
    }
}

TEST(TrainTransform, FlipCropAndDisabledMode) {
    Rng rng(1);
    Image im(3, 32, 32);
    for (float& p : im.pixels) p = static_cast<float>(rng.uniform());
    EXPECT_EQ(hflip(hflip(im)), im);
    EXPECT_NE(hflip(im), im);

    TrainAugment aug;
    aug.enabled = true;
    for (int i = 0; i < 500; ++i) {
        const TransformDraw d = draw_transform(rng, aug);
        EXPECT_LE(d.dx, 8u);
        EXPECT_LE(d.dy, 8u);
    }
    const Image padded = reflect_pad(im, 4);
    EXPECT_EQ(padded.height, 40u);
    EXPECT_EQ(crop(padded, 4, 4, 32, 32), im);
    EXPECT_EQ(padded.at(0, 0, 4), im.at(0, 4, 0));  // reflection excludes the edge row
    EXPECT_EQ(apply_transform(im, TransformDraw{4, 4, false}, aug), im);

    TrainAugment off;
    Rng a(5), b(5);
    EXPECT_EQ(train_transform(im, a, off), im);
    EXPECT_EQ(a.next(), b.next());
    Rng c(6), d(6);
    EXPECT_EQ(train_transform(im, c, aug), train_transform(im, d, aug));
}

TEST(Dataset, ValidateAndStatistics) {
    Dataset ds;
    ds.num_classes = 2;
    ds.images = {Image(1, 2, 2, 0.0f), Image(1, 2, 2, 1.0f)};
    ds.labels = {0, 1};
    EXPECT_NO_THROW(ds.validate());
    const InputNormalization n = channel_statistics(ds.images);
    EXPECT_FLOAT_EQ(n.mean[0], 0.5f);
    EXPECT_FLOAT_EQ(n.stddev[0], 0.5f);
    ds.labels[1] = 2;
    EXPECT_THROW(ds.validate(), Error);
    ds.labels[1] = 1;
    ds.images[1] = Image(1, 3, 2);
    EXPECT_THROW(ds.validate(), Error);
}
