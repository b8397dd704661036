#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "leancnn/data.hpp"
#include "leancnn/image.hpp"

using namespace leancnn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = fs::temp_directory_path() / (std::string("leancnn_") + info->test_suite_name() + "_" + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Image ramp(std::size_t h, std::size_t w, std::size_t c = 3) {
  Image img({h, w, c});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i) / static_cast<float>(img.size());
  return img;
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

std::string error_text(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const DataError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Resize, SameSizeIsBitIdentical) {
  const auto img = ramp(5, 7);
  EXPECT_TRUE(resize_bilinear(img, 5, 7).bitwise_equal(img));
}

TEST(Resize, CheckerboardHalvesToGray) {
  Image board({8, 8, 1});
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) board.at(y, x, 0) = static_cast<float>((x + y) % 2);
  const auto out = resize_bilinear(board, 4, 4);
  for (float v : out.values()) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(Resize, ConstantStaysConstant) {
  const auto out = resize(Image({3, 5, 3}, 0.25f), 11);
  EXPECT_EQ(out.shape(), (Shape{11, 11, 3}));
  for (float v : out.values()) EXPECT_FLOAT_EQ(v, 0.25f);
}

TEST(Augment, QuarterTurnIsCounterClockwise) {
  Image img({2, 3, 1}, std::vector<float>{1, 2, 3, 4, 5, 6});
  const auto r = apply_augment(img, AugmentOp::rot90);
  ASSERT_EQ(r.shape(), (Shape{3, 2, 1}));
  EXPECT_EQ(r.at(0, 0, 0), 3.0f);
  EXPECT_EQ(r.at(0, 1, 0), 6.0f);
  EXPECT_EQ(r.at(2, 0, 0), 1.0f);
}

TEST(Augment, GroupIdentities) {
  const auto img = ramp(4, 6);
  auto apply = [](Image x, std::initializer_list<AugmentOp> ops) {
    for (auto op : ops) x = apply_augment(x, op);
    return x;
  };
  using enum AugmentOp;
  EXPECT_TRUE(apply(img, {rot90, rot90, rot90, rot90}).bitwise_equal(img));
  EXPECT_TRUE(apply(img, {rot90, rot270}).bitwise_equal(img));
  EXPECT_TRUE(apply(img, {rot90, rot90}).bitwise_equal(apply(img, {rot180})));
  EXPECT_TRUE(apply(img, {hflip, hflip}).bitwise_equal(img));
  EXPECT_TRUE(apply(img, {vflip, vflip}).bitwise_equal(img));
  EXPECT_TRUE(apply(img, {hflip, vflip}).bitwise_equal(apply(img, {rot180})));
}

TEST(Augment, SeededChoice) {
  const auto img = ramp(4, 4);
  const std::vector<AugmentOp> ops{AugmentOp::rot90, AugmentOp::hflip};
  EXPECT_TRUE(augment(img, std::span<const AugmentOp>(), 3).bitwise_equal(img));
  std::set<std::string> seen;
  for (std::uint64_t s = 0; s < 60; ++s) {
    const auto a = augment(img, std::span<const AugmentOp>(ops), s);
    EXPECT_TRUE(a.bitwise_equal(augment(img, std::span<const AugmentOp>(ops), s)));
    std::string key(reinterpret_cast<const char*>(a.values().data()), a.size() * sizeof(float));
    seen.insert(key);
  }
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_EQ(parse_augment_op("vflip"), AugmentOp::vflip);
  EXPECT_THROW(parse_augment_op("shear"), Error);
}

TEST(Stats, HandComputed) {
  Dataset ds;
  ds.classes = {"a"};
  ds.images.push_back({"x", Image({1, 1, 3}, std::vector<float>{0.0f, 0.25f, 1.0f}), 0});
  ds.images.push_back({"y", Image({1, 1, 3}, std::vector<float>{1.0f, 0.75f, 1.0f}), 0});
  const auto s = compute_stats(ds);
  EXPECT_DOUBLE_EQ(s.mean[0], 0.5);
  EXPECT_DOUBLE_EQ(s.mean[1], 0.5);
  EXPECT_DOUBLE_EQ(s.stddev[0], 0.5);
  EXPECT_DOUBLE_EQ(s.stddev[1], 0.25);
  EXPECT_EQ(s.stddev[2], 0.0);
  EXPECT_TRUE(s.degenerate());
  const auto msg = error_text([&] { normalize_dataset(ds, s); });
  EXPECT_NE(msg.find("channel 2"), std::string::npos);
  EXPECT_THROW(compute_stats(Dataset{}), DataError);
}

TEST(Stats, NormalizedSyntheticSetsAreStandard) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ds = synth_dataset(2 + seed % 3, 4 + seed, 12 + 4 * seed, seed);
    normalize_dataset(ds, compute_stats(ds));
    const auto after = compute_stats(ds);
    for (std::size_t c = 0; c < 3; ++c) {
      EXPECT_LT(std::abs(after.mean[c]), 1e-6);
      EXPECT_LT(std::abs(after.stddev[c] - 1.0), 1e-6);
    }
    ASSERT_TRUE(ds.stats.has_value());
  }
}

TEST(Split, StratifiedCounts) {
  const auto ds = synth_dataset(2, 70, 4, 1);
  const auto parts = split(ds, SplitRatios{}, 9);
  EXPECT_EQ(parts.train.histogram(), (std::vector<std::size_t>{56, 56}));
  EXPECT_EQ(parts.val.histogram(), (std::vector<std::size_t>{7, 7}));
  EXPECT_EQ(parts.test.histogram(), (std::vector<std::size_t>{7, 7}));

  std::multiset<std::string> ids;
  for (const auto* p : {&parts.train, &parts.val, &parts.test}) {
    for (const auto& im : p->images) ids.insert(im.id);
    for (std::size_t i = 1; i < p->images.size(); ++i) EXPECT_LT(p->images[i - 1].id, p->images[i].id);
  }
  EXPECT_EQ(ids.size(), 140u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), 140u);
}

TEST(Split, SeededAndSmallClasses) {
  const auto ds = synth_dataset(3, 10, 4, 2);
  auto ids = [](const Dataset& d) {
    std::vector<std::string> out;
    for (const auto& im : d.images) out.push_back(im.id);
    return out;
  };
  EXPECT_EQ(ids(split(ds, SplitRatios{}, 1).val), ids(split(ds, SplitRatios{}, 1).val));
  EXPECT_NE(ids(split(ds, SplitRatios{}, 1).train), ids(split(ds, SplitRatios{}, 2).train));
  const auto tv = split(ds, SplitRatios{0.8, 0.2, 0.0}, 1);
  EXPECT_TRUE(tv.test.empty());
  EXPECT_EQ(tv.val.histogram(), (std::vector<std::size_t>{2, 2, 2}));

  const auto tiny = synth_dataset(2, 2, 4, 3);
  EXPECT_THROW(split(tiny, SplitRatios{}, 0), DataError);
  EXPECT_NO_THROW(split(tiny, SplitRatios{0.5, 0.5, 0.0}, 0));
  EXPECT_THROW(split(ds, SplitRatios{0.5, 0.2, 0.2}, 0), Error);
  EXPECT_THROW(split(ds, SplitRatios{0.0, 0.5, 0.5}, 0), Error);
}

TEST(Synth, ShapesLabelsAndDeterminism) {
  const auto a = synth_dataset(3, 4, 16, 7);
  ASSERT_EQ(a.size(), 12u);
  EXPECT_EQ(a.classes, (std::vector<std::string>{"class0", "class1", "class2"}));
  EXPECT_EQ(a.images[5].id, "synth_c1_0001");
  EXPECT_EQ(a.images[5].label, 1);
  EXPECT_EQ(a.histogram(), (std::vector<std::size_t>{4, 4, 4}));
  const auto b = synth_dataset(3, 4, 16, 7);
  const auto c = synth_dataset(3, 4, 16, 8);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.images[i].pixels.shape(), (Shape{16, 16, 3}));
    EXPECT_TRUE(a.images[i].pixels.bitwise_equal(b.images[i].pixels));
    EXPECT_FALSE(a.images[i].pixels.bitwise_equal(c.images[i].pixels));
    for (float v : a.images[i].pixels.values()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
  EXPECT_THROW(synth_dataset(1, 4, 16, 0), Error);
}

TEST(Csv, QuotedFields) {
  EXPECT_EQ(split_csv_line("a,\"b,c\",\"say \"\"hi\"\"\",\r"),
            (std::vector<std::string>{"a", "b,c", "say \"hi\"", ""}));
}

TEST(Ppm, RoundTrip) {
  const auto dir = scratch_dir();
  Image img({3, 4, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i * 7 % 256) / 255.0f;
  write_ppm(dir / "x.ppm", img);
  const auto back = read_image(dir / "x.ppm");
  ASSERT_EQ(back.shape(), img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back[i], img[i], 1e-6);
  write_text(dir / "bad.ppm", "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(read_image(dir / "bad.ppm"), DataError);
  write_text(dir / "short.ppm", "P6\n4 4\n255\nabc");
  EXPECT_THROW(read_image(dir / "short.ppm"), DataError);
  EXPECT_THROW(read_image(dir / "x.bmp"), DataError);
}

TEST(LoadDataset, RoundTripThroughDirectory) {
  const auto dir = scratch_dir();
  const auto ds = synth_dataset(3, 3, 8, 4);
  write_dataset(ds, dir);
  const auto back = load_dataset(dir, dir / "metadata.csv", ds.classes);
  ASSERT_EQ(back.size(), ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    EXPECT_EQ(back.images[i].id, ds.images[i].id);
    EXPECT_EQ(back.images[i].label, ds.images[i].label);
    for (std::size_t j = 0; j < ds.images[i].pixels.size(); ++j) {
      EXPECT_NEAR(back.images[i].pixels[j], ds.images[i].pixels[j], 0.5 / 255.0 + 1e-6);
    }
  }
}

TEST(LoadDataset, Errors) {
  const auto dir = scratch_dir();
  write_dataset(synth_dataset(2, 1, 4, 0), dir);
  const std::vector<std::string> classes{"class0", "class1"};

  write_text(dir / "unknown.csv", "image_id,dx\nsynth_c0_0000,class0\nsynth_c1_0000,melanoma\n");
  EXPECT_NE(error_text([&] { load_dataset(dir, dir / "unknown.csv", classes); }).find("melanoma"),
            std::string::npos);

  write_text(dir / "missing.csv", "image_id,dx\nghost1,class0\nsynth_c0_0000,class0\nghost2,class1\n");
  const auto msg = error_text([&] { load_dataset(dir, dir / "missing.csv", classes); });
  EXPECT_NE(msg.find("ghost1"), std::string::npos);
  EXPECT_NE(msg.find("ghost2"), std::string::npos);

  write_text(dir / "dup.csv", "image_id,dx\nsynth_c0_0000,class0\nsynth_c0_0000,class0\n");
  EXPECT_THROW(load_dataset(dir, dir / "dup.csv", classes), DataError);

  write_text(dir / "cols.csv", "id,label\nsynth_c0_0000,class0\n");
  EXPECT_THROW(load_dataset(dir, dir / "cols.csv", classes), DataError);
  EXPECT_NO_THROW(load_dataset(dir, dir / "cols.csv", classes, MetadataColumns{"id", "label"}));

  EXPECT_THROW(load_dataset(dir, dir / "nope.csv", classes), DataError);
}
