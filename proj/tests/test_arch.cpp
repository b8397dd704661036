#include <gtest/gtest.h>

#include <cmath>

#include "leancnn/arch.hpp"
#include "leancnn/dsl.hpp"
#include "leancnn/engine.hpp"
#include "leancnn/params.hpp"
#include "oracles.hpp"

using namespace leancnn;

namespace {

constexpr const char* kCustomCnnDoc = R"(# compact CNN, 224x224 RGB, seven classes
input 224 224 3
conv2d name=c1 filters=32 kernel=3 stride=1 padding=same activation=relu
maxpool2d name=pool1 window=2 stride=2
conv2d name=c2 filters=64 kernel=3 activation=relu
maxpool2d name=pool2 window=2 stride=2
conv2d name=c3 filters=128 kernel=3 activation=relu
maxpool2d name=pool3 window=2 stride=2
flatten name=flatten
dense name=d1 units=256 activation=relu
dropout name=dropout rate=0.5
dense name=d2 units=7 activation=softmax
)";

std::size_t parse_error_line(const std::string& doc) {
  try {
    parse_architecture(doc);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

std::string parse_error_text(const std::string& doc) {
  try {
    parse_architecture(doc);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Dsl, ParsesCustomCnnDocument) {
  const auto spec = parse_architecture(kCustomCnnDoc);
  ASSERT_EQ(spec.layers.size(), 11u);
  EXPECT_EQ(spec.layers.front().kind, LayerKind::input);
  EXPECT_EQ(spec.layers, build_custom_cnn().layers);
}

TEST(Dsl, AutoNamesAndDefaults) {
  const auto spec = parse_architecture("input 8 8 3\nconv2d filters=4\nmaxpool2d window=2\nflatten\ndense units=2\n");
  EXPECT_EQ(spec.layers[1].name, "conv2d_1");
  EXPECT_EQ(spec.layers[1].padding, Padding::same);
  EXPECT_EQ(spec.layers[2].stride, 2u);
  EXPECT_EQ(spec.layers[2].padding, Padding::valid);
  EXPECT_EQ(spec.layers[4].name, "dense_1");
}

TEST(Dsl, KeysAreOrderInsensitive) {
  const auto a = parse_architecture("input 4 4 1\nconv2d filters=2 kernel=1 name=x\n");
  const auto b = parse_architecture("input 4 4 1\nconv2d name=x kernel=1 filters=2\n");
  EXPECT_EQ(a.layers, b.layers);
}

TEST(Dsl, Errors) {
  EXPECT_EQ(parse_error_line(""), 1u);
  EXPECT_NE(parse_error_text("").find("no input layer"), std::string::npos);
  EXPECT_NE(parse_error_text("# only a comment\n").find("no input layer"), std::string::npos);

  const std::string kernel0 = "input 8 8 3\nconv2d filters=4 kernel=0\n";
  EXPECT_EQ(parse_error_line(kernel0), 2u);
  EXPECT_NE(parse_error_text(kernel0).find("kernel"), std::string::npos);

  EXPECT_EQ(parse_error_line("input 8 8 3\n\nconv3d filters=4\n"), 3u);
  EXPECT_EQ(parse_error_line("input 8 8 3\ndense activation=relu\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3\nconv2d name=a filters=1\nconv2d name=a filters=1\n"), 3u);
  EXPECT_EQ(parse_error_line("input 8 8 3\ndropout rate=1.0\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3\nconv2d filters=2 color=red\n"), 2u);
  EXPECT_EQ(parse_error_line("conv2d filters=2\n"), 1u);
  EXPECT_EQ(parse_error_line("input 8 8 3\ninput 8 8 3\n"), 2u);
}

TEST(Dsl, IllegalAdjacency) {
  const std::string doc =
      "input 224 224 3\nconv2d filters=32 activation=relu\nmaxpool2d\nconv2d filters=64 activation=relu\n"
      "maxpool2d\nconv2d filters=128 activation=relu\nmaxpool2d\ndense units=7 activation=softmax\n";
  EXPECT_EQ(parse_error_line(doc), 8u);
}

TEST(Dsl, RoundTrip) {
  for (const auto& spec : {build_custom_cnn(), build_custom_cnn(32, 3), build_resnet50(7),
                           build_resnet50(2, HeadConfig{true, 128, 0.25})}) {
    const std::string text = serialize_architecture(spec);
    const auto again = parse_architecture(text);
    EXPECT_EQ(again.layers, spec.layers);
    EXPECT_EQ(serialize_architecture(again), text);
  }
  auto frozen = build_custom_cnn();
  frozen.layers[1].trainable = false;
  EXPECT_EQ(parse_architecture(serialize_architecture(frozen)).layers, frozen.layers);
}

TEST(Shapes, CustomCnnMatchesTable) {
  const auto rows = infer_shapes(build_custom_cnn());
  const std::vector<Shape> expected = {{224, 224, 3}, {224, 224, 32}, {112, 112, 32}, {112, 112, 64},
                                       {56, 56, 64},  {56, 56, 128},  {28, 28, 128},  {100352},
                                       {256},         {256},          {7}};
  ASSERT_EQ(rows.size(), expected.size());
  for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_EQ(rows[i].shape, expected[i]) << rows[i].name;
}

TEST(Shapes, InputOnly) {
  ArchitectureSpec s;
  s.layers = {layers::input({5, 6, 3})};
  const auto rows = infer_shapes(s);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].shape, (Shape{5, 6, 3}));
}

TEST(Shapes, AdjacencyErrorNamesLayer) {
  ArchitectureSpec s;
  s.layers = {layers::input({28, 28, 128}), layers::dense("head", 7, Activation::softmax)};
  try {
    infer_shapes(s);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("head"), std::string::npos);
  }
}

TEST(Builders, CustomCnnCounts) {
  const auto spec = build_custom_cnn();
  std::size_t convs = 0, denses = 0;
  for (const auto& l : spec.layers) {
    convs += l.kind == LayerKind::conv2d;
    denses += l.kind == LayerKind::dense;
  }
  EXPECT_EQ(convs, 3u);
  EXPECT_EQ(denses, 2u);
}

TEST(Builders, ResNet50Structure) {
  const auto spec = build_resnet50(7);
  EXPECT_EQ(output_shape(spec), (Shape{7}));
  std::size_t blocks = 0;
  for (const auto& l : spec.layers) blocks += l.kind == LayerKind::residual_block;
  EXPECT_EQ(blocks, 16u);
  const auto rows = infer_shapes(spec);
  auto find = [&](const std::string& n) {
    for (const auto& r : rows) {
      if (r.name == n) return r.shape;
    }
    return Shape{};
  };
  EXPECT_EQ(find("stem.pool"), (Shape{56, 56, 64}));
  EXPECT_EQ(find("stage1.block3"), (Shape{56, 56, 256}));
  EXPECT_EQ(find("stage2.block4"), (Shape{28, 28, 512}));
  EXPECT_EQ(find("stage3.block6"), (Shape{14, 14, 1024}));
  EXPECT_EQ(find("stage4.block3"), (Shape{7, 7, 2048}));
  EXPECT_EQ(find("avg_pool"), (Shape{2048}));
  EXPECT_EQ(output_shape(build_resnet50(7, HeadConfig{false})), (Shape{2048}));
}

TEST(Builders, ResNet50BackboneMatchesHandLedger) {
  // Hand ledger of the standard bottleneck configuration: 7x7 stem conv +
  // batchnorm, then per block 1x1 -> 3x3 -> 1x1(4f) convs with biases, a
  // batchnorm (4 values per channel) after each, and a projection conv +
  // batchnorm on the first block of every stage.
  auto conv = [](std::uint64_t k, std::uint64_t cin, std::uint64_t cout) { return (k * k * cin + 1) * cout; };
  auto bn = [](std::uint64_t c) { return 4 * c; };
  std::uint64_t total = conv(7, 3, 64) + bn(64);
  std::uint64_t cin = 64;
  const std::uint64_t f[] = {64, 128, 256, 512};
  const int n[] = {3, 4, 6, 3};
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < n[s]; ++b) {
      total += conv(1, cin, f[s]) + bn(f[s]) + conv(3, f[s], f[s]) + bn(f[s]) + conv(1, f[s], 4 * f[s]) + bn(4 * f[s]);
      if (b == 0) total += conv(1, cin, 4 * f[s]) + bn(4 * f[s]);
      cin = 4 * f[s];
    }
  }
  const auto params = init_parameters<float>(build_resnet50(7, HeadConfig{false}), 1);
  EXPECT_EQ(params.total_elements(), total);
  EXPECT_GE(total, 23'500'000u);
  EXPECT_LE(total, 24'000'000u);
}

TEST(Params, InitIsDeterministic) {
  const auto spec = build_custom_cnn(32, 3);
  const auto a = init_parameters<float>(spec, 42), b = init_parameters<float>(spec, 42);
  EXPECT_TRUE(a.bitwise_equal(b));
  EXPECT_FALSE(a.bitwise_equal(init_parameters<float>(spec, 43)));
}

TEST(Params, ConvCountsAndZeroBias) {
  const auto p = init_parameters<float>(build_custom_cnn(), 0);
  const auto& c1 = p.at("c1");
  EXPECT_EQ(c1.weights.size(), 864u);
  EXPECT_EQ(c1.bias.size(), 32u);
  for (float v : c1.bias.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Params, HeUniformVariance) {
  ArchitectureSpec s;
  s.layers = {layers::input({200}), layers::dense("d", 100)};
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = init_parameters<double>(s, seed);
    for (double v : p.at("d").weights.values()) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  EXPECT_NEAR(var, 2.0 / 200.0, 0.2 * 2.0 / 200.0);
}

TEST(Params, SetTrainable) {
  auto p = init_parameters<float>(build_resnet50(7), 0);
  EXPECT_EQ(set_trainable(p, "stage4.*", false), 20u);
  EXPECT_EQ(set_trainable(p, ".*", false), p.size());
  EXPECT_EQ(set_trainable(p, ".*", false), p.size());
  EXPECT_EQ(set_trainable(p, "head\\..*", true), 1u);
  for (const auto& e : p.entries()) EXPECT_EQ(e.trainable, e.name == "head.out") << e.name;
  EXPECT_THROW(set_trainable(p, "stage9.*", true), Error);
}

namespace {

ResidualBlockSpec plain_block(std::size_t channels) {
  ResidualBlockSpec b;
  b.branch = {layers::conv2d("b.conv1", channels, 3), layers::simple(LayerKind::batchnorm, "b.bn1"),
              layers::simple(LayerKind::relu, "b.relu1"), layers::conv2d("b.conv2", channels, 3),
              layers::simple(LayerKind::batchnorm, "b.bn2")};
  return b;
}

Tensor<double> random_input(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<double> t(std::move(s));
  for (auto& v : t.values()) v = rng.uniform(-1, 1);
  return t;
}

}  // namespace

TEST(ResidualBlock, ZeroBranchIsIdentity) {
  const auto block = plain_block(3);
  auto params = init_parameters<double>(block, {4, 4, 3}, 5);
  for (auto& e : params.mutable_entries()) {
    if (e.kind == LayerKind::conv2d) e.weights.fill(0.0);
  }
  const auto x = random_input({4, 4, 3}, 9);
  EXPECT_TRUE(residual_block_forward(x, block, params).bitwise_equal(x));
}

TEST(ResidualBlock, IdentityBranchDoubles) {
  ResidualBlockSpec b;
  b.branch = {layers::conv2d("id", 2, 1)};
  auto params = init_parameters<double>(b, {3, 3, 2}, 1);
  auto& w = params.at("id").weights;
  w.fill(0.0);
  w.at(0, 0, 0, 0) = 1.0;
  w.at(0, 0, 1, 1) = 1.0;
  const auto x = random_input({3, 3, 2}, 2);
  const auto y = residual_block_forward(x, b, params);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], 2.0 * x[i]);
}

TEST(ResidualBlock, MatchesTwoBranchReference) {
  const auto spec = layers::resblock("r", 1, 1);
  const Shape in{4, 4, 2};
  const auto block = expand_residual(spec, in);
  ASSERT_EQ(block.shortcut.size(), 2u);
  auto params = init_parameters<double>(block, in, 17);
  Rng rng(23);
  for (auto& e : params.mutable_entries()) {
    if (e.kind != LayerKind::batchnorm) continue;
    for (auto& v : e.weights.values()) v = rng.uniform(0.5, 1.5);
    for (auto& v : e.bias.values()) v = rng.uniform(-0.2, 0.2);
    for (auto& v : e.aux[0].values()) v = rng.uniform(-0.3, 0.3);
    for (auto& v : e.aux[1].values()) v = rng.uniform(0.5, 2.0);
  }
  const auto x = random_input(in, 31);

  auto conv = [&](const Tensor<double>& t, const std::string& name) {
    const auto& e = params.at(name);
    const std::size_t k = e.weights.dim(0);
    return oracle::conv2d(t, e.weights, e.bias,
                          oracle::ConvCase{t.dim(0), t.dim(1), t.dim(2), e.weights.dim(3), k, 1, true});
  };
  auto bn = [&](Tensor<double> t, const std::string& name) {
    const auto& e = params.at(name);
    const std::size_t c = t.shape().back();
    for (std::size_t i = 0; i < t.size(); ++i) {
      const std::size_t ch = i % c;
      t[i] = e.weights[ch] * (t[i] - e.aux[0][ch]) / std::sqrt(e.aux[1][ch] + 1e-3) + e.bias[ch];
    }
    return t;
  };
  auto relu = [](Tensor<double> t) {
    for (auto& v : t.values()) v = std::max(v, 0.0);
    return t;
  };
  auto branch = bn(conv(relu(bn(conv(relu(bn(conv(x, "r.conv1"), "r.bn1")), "r.conv2"), "r.bn2")), "r.conv3"), "r.bn3");
  auto skip = bn(conv(x, "r.proj_conv"), "r.proj_bn");
  const auto y = residual_block_forward(x, block, params);
  ASSERT_EQ(y.shape(), branch.shape());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], std::max(branch[i] + skip[i], 0.0), 1e-12);
}

TEST(ResidualBlock, ProjectionNeverRejectsChannelChange) {
  auto l = layers::resblock("r", 4, 1, true, Projection::never);
  EXPECT_THROW(expand_residual(l, {8, 8, 3}), ShapeError);
  EXPECT_NO_THROW(expand_residual(l, {8, 8, 16}));
}
