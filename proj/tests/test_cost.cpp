#include <gtest/gtest.h>

#include "leancnn/arch.hpp"
#include "leancnn/cost.hpp"
#include "leancnn/params.hpp"
#include "leancnn/rng.hpp"
#include "oracles.hpp"

using namespace leancnn;

TEST(Flops, ConvMatchesInstrumentedReference) {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    oracle::ConvCase c{1 + rng.below(12), 1 + rng.below(12), 1 + rng.below(4), 1 + rng.below(4),
                       1 + rng.below(5),  1 + rng.below(3),  rng.below(2) == 0};
    if (!c.same && (c.h < c.k || c.w < c.k)) continue;
    Tensor<double> x({c.h, c.w, c.cin}, 1.0), w({c.k, c.k, c.cin, c.cout}, 1.0), b({c.cout}, 0.0);
    std::uint64_t multiplies = 0;
    oracle::conv2d(x, w, b, c, &multiplies);
    const ConvGeometry g{c.h, c.w, c.cin, c.cout, c.k, c.stride, c.same ? Padding::same : Padding::valid};
    ASSERT_EQ(conv_flops(g), multiplies) << "trial " << trial;
    ASSERT_EQ(conv_flops(g, FlopConvention::mul_add_as_two), 2 * multiplies);
  }
}

TEST(Flops, DenseMatchesInstrumentedReference) {
  Rng rng(18);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n_in = 1 + rng.below(300), n_out = 1 + rng.below(40);
    std::vector<double> x(n_in, 1.0), w(n_in * n_out, 1.0), b(n_out, 0.0);
    std::uint64_t multiplies = 0;
    oracle::dense(x, w, b, n_out, &multiplies);
    ASSERT_EQ(dense_flops(n_in, n_out), multiplies);
  }
  EXPECT_THROW(dense_flops(0, 3), ShapeError);
}

TEST(CostModel, CustomCnnPerLayer) {
  const auto r = analyze(build_custom_cnn());
  EXPECT_EQ(r.find("c1")->params, 896u);
  EXPECT_EQ(r.find("c2")->params, 18'496u);
  EXPECT_EQ(r.find("c3")->params, 73'856u);
  EXPECT_EQ(r.find("d1")->params, 25'690'368u);
  EXPECT_EQ(r.find("d2")->params, 1'799u);
  for (const char* n : {"pool1", "pool2", "pool3", "flatten", "dropout"}) EXPECT_EQ(r.find(n)->params, 0u);

  EXPECT_EQ(r.find("c1")->flops, 224ull * 224 * 3 * 32 * 9);
  EXPECT_EQ(r.find("c2")->flops, 112ull * 112 * 32 * 64 * 9);
  EXPECT_EQ(r.find("c3")->flops, 56ull * 56 * 64 * 128 * 9);
  EXPECT_EQ(r.find("d1")->flops, 100'352ull * 256);
  EXPECT_EQ(r.find("d2")->flops, 256ull * 7);
  EXPECT_EQ(r.find("d1")->output_shape, (Shape{256}));
  EXPECT_EQ(r.find("flatten")->output_shape, (Shape{100'352}));
}

TEST(CostModel, CustomCnnTotals) {
  const auto r = analyze(build_custom_cnn());
  EXPECT_EQ(r.totals.params, 25'785'415u);
  EXPECT_EQ(r.totals.flops, 531'465'984u);
  EXPECT_EQ(r.totals.memory_bytes, 4u * 25'785'415u);
  EXPECT_EQ(r.totals.params, init_parameters<float>(build_custom_cnn(), 0).total_elements());
}

TEST(CostModel, ConventionsAndExtended) {
  const auto base = analyze(build_custom_cnn());
  const auto twice = analyze(build_custom_cnn(), FlopConvention::mul_add_as_two);
  EXPECT_EQ(twice.totals.flops, 2 * base.totals.flops);
  EXPECT_EQ(twice.totals.params, base.totals.params);
  const auto ext = analyze(build_custom_cnn(), AnalyzeOptions{FlopConvention::mac_as_one, true, 4});
  EXPECT_GT(ext.totals.flops, base.totals.flops);
  // bias add + relu per output element of c1
  EXPECT_EQ(ext.find("c1")->flops, base.find("c1")->flops + 2ull * 224 * 224 * 32);
  EXPECT_EQ(parse_flop_convention("mul-add-as-two"), FlopConvention::mul_add_as_two);
  EXPECT_THROW(parse_flop_convention("fma"), Error);
}

TEST(CostModel, ResNetTotalsMatchParameterStore) {
  for (const auto& spec : {build_resnet50(7), build_resnet50(7, HeadConfig{false}),
                           build_resnet50(2, HeadConfig{true, 64, 0.5})}) {
    const auto r = analyze(spec);
    EXPECT_EQ(r.totals.params, init_parameters<float>(spec, 0).total_elements());
    ASSERT_NE(r.find("stage1.block1.add"), nullptr);
    EXPECT_NE(r.find("stage1.block1.proj_conv"), nullptr);
    EXPECT_EQ(r.find("stage1.block2.proj_conv"), nullptr);
  }
}

TEST(Render, GroupThousands) {
  EXPECT_EQ(group_thousands(0), "0");
  EXPECT_EQ(group_thousands(999), "999");
  EXPECT_EQ(group_thousands(1000), "1,000");
  EXPECT_EQ(group_thousands(25'785'415), "25,785,415");
  EXPECT_EQ(group_thousands(100'000), "100,000");
}

TEST(Render, TextMentionsTotals) {
  const auto text = render_text(analyze(build_custom_cnn()));
  EXPECT_NE(text.find("25,785,415"), std::string::npos);
  EXPECT_NE(text.find("531,465,984"), std::string::npos);
  EXPECT_NE(text.find("(224, 224, 32)"), std::string::npos);
}

TEST(Render, CsvAndJsonRoundTrip) {
  for (const auto& r : {analyze(build_custom_cnn()),
                        analyze(build_resnet50(7), AnalyzeOptions{FlopConvention::mul_add_as_two, true, 4})}) {
    for (const auto& text : {render_csv(r), render_json(r)}) {
      const auto back = parse_cost_report(text);
      EXPECT_EQ(back.convention, r.convention);
      EXPECT_EQ(back.extended, r.extended);
      EXPECT_EQ(back.rows, r.rows);
      EXPECT_EQ(back.totals, r.totals);
    }
  }
}

TEST(Render, TamperedTotalsRejected) {
  auto csv = render_csv(analyze(build_custom_cnn(32, 3)));
  const auto pos = csv.find("TOTAL,total,,");
  ASSERT_NE(pos, std::string::npos);
  csv.insert(pos + 13, "1");
  EXPECT_THROW(parse_cost_report(csv), Error);
  EXPECT_THROW(parse_cost_report("not,a,report\n"), Error);
  EXPECT_THROW(parse_cost_report("{\"rows\": 3}"), Error);
}

TEST(Compare, DeviationArithmetic) {
  EXPECT_EQ(deviation_hundredths(30'040'000, 4'000'000'000), 1'321'558);
  EXPECT_EQ(format_percent_hundredths(1'321'558), "+13,215.58%");
  EXPECT_EQ(deviation_hundredths(200, 100), -5000);
  EXPECT_EQ(format_percent_hundredths(-5000), "-50.00%");
  EXPECT_EQ(deviation_hundredths(20'000, 20'001), 1);
  EXPECT_EQ(deviation_hundredths(20'000, 19'999), -1);
  EXPECT_EQ(deviation_hundredths(7, 7), 0);
  EXPECT_EQ(format_percent_hundredths(0), "0.00%");
  EXPECT_FALSE(deviation_hundredths(0, 5).has_value());
}

TEST(Compare, ReportsAndAccuracy) {
  const auto cmp = compare(totals_report(30'040'000, 30'040'000), totals_report(23'587'712, 4'000'000'000), 87.05,
                           89.08);
  EXPECT_EQ(cmp.at("flops").deviation_text(), "+13,215.58%");
  ASSERT_TRUE(cmp.accuracy.has_value());
  EXPECT_NEAR(cmp.accuracy->absolute_delta, 2.03, 1e-9);
  EXPECT_NEAR(cmp.accuracy->relative_delta, 2.03 / 87.05 * 100, 1e-9);
  const auto text = render_comparison(cmp);
  EXPECT_NE(text.find("+2.03 points absolute, +2.33% relative"), std::string::npos);
  EXPECT_NE(text.find("4,000,000,000"), std::string::npos);
}

TEST(Compare, Errors) {
  EXPECT_THROW(compare(totals_report(1, 1), totals_report(1, 1, FlopConvention::mul_add_as_two)), Error);
  EXPECT_THROW(compare(totals_report(1, 1), totals_report(1, 1), 80.0, std::nullopt), Error);
  EXPECT_EQ(compare(totals_report(0, 1), totals_report(3, 1)).at("params").deviation_text(), "n/a");
}
