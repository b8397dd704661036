#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "leancnn/metrics.hpp"
#include "leancnn/rng.hpp"
#include "oracles.hpp"

using namespace leancnn;

namespace {

// Binary case with TP=8, FP=2, FN=4, TN=6 for class 1.
ConfusionMatrix hand_matrix() {
  ConfusionMatrix m(2);
  for (int i = 0; i < 8; ++i) m.add(1, 1);
  for (int i = 0; i < 2; ++i) m.add(0, 1);
  for (int i = 0; i < 4; ++i) m.add(1, 0);
  for (int i = 0; i < 6; ++i) m.add(0, 0);
  return m;
}

Tensor<double> column(const std::vector<double>& v) { return Tensor<double>({v.size(), 1}, v); }

}  // namespace

TEST(Confusion, CountsAndIdentities) {
  const auto m = hand_matrix();
  EXPECT_EQ(m.total(), 20u);
  EXPECT_EQ(m.true_positives(1), 8u);
  EXPECT_EQ(m.false_positives(1), 2u);
  EXPECT_EQ(m.false_negatives(1), 4u);
  EXPECT_EQ(m.true_negatives(1), 6u);
  EXPECT_DOUBLE_EQ(accuracy(m), 0.7);

  const std::vector<int> pred{0, 1, 2, 2, 1}, truth{0, 1, 1, 2, 0};
  const auto c = confusion_matrix(pred, truth, 3);
  EXPECT_EQ(c.at(1, 2), 1u);
  EXPECT_EQ(c.at(0, 1), 1u);
  EXPECT_EQ(c.trace(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(c.true_positives(k) + c.false_positives(k) + c.false_negatives(k) + c.true_negatives(k), c.total());
  }
  EXPECT_THROW(confusion_matrix(std::vector<int>{3}, std::vector<int>{0}, 3), Error);
  EXPECT_THROW(accuracy(ConfusionMatrix(2)), DataError);
}

TEST(Prf, HandComputedCase) {
  const auto r = precision_recall_f1(hand_matrix(), 1);
  EXPECT_DOUBLE_EQ(r.precision, 0.8);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 8.0 / 11.0);
  EXPECT_FALSE(r.any_undefined());
}

TEST(Prf, UndefinedCasesAreFlagged) {
  const auto none_predicted = prf_from_counts(0, 0, 5);
  EXPECT_TRUE(none_predicted.precision_undefined);
  EXPECT_EQ(none_predicted.recall, 0.0);
  EXPECT_TRUE(none_predicted.f1_undefined);
  const auto absent = prf_from_counts(0, 3, 0);
  EXPECT_TRUE(absent.recall_undefined);
  EXPECT_FALSE(absent.precision_undefined);
}

TEST(Prf, MacroAndMicro) {
  const std::vector<int> pred{0, 0, 1, 1, 2, 2, 2, 0}, truth{0, 1, 1, 1, 2, 0, 2, 0};
  const auto m = confusion_matrix(pred, truth, 3);
  const auto micro = precision_recall_f1(m, Averaging::micro);
  EXPECT_DOUBLE_EQ(micro.precision, accuracy(m));
  EXPECT_DOUBLE_EQ(micro.recall, accuracy(m));
  const auto macro = precision_recall_f1(m, Averaging::macro);
  double p = 0;
  for (std::size_t c = 0; c < 3; ++c) p += precision_recall_f1(m, c).precision;
  EXPECT_DOUBLE_EQ(macro.precision, p / 3.0);
  // class 0: TP 2, FP 1, FN 1; class 1: TP 2, FP 0, FN 1; class 2: TP 2, FP 1, FN 0
  EXPECT_NEAR(macro.recall, (2.0 / 3 + 2.0 / 3 + 1.0) / 3, 1e-15);
}

TEST(Auc, MatchesMannWhitneyOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    const bool coarse = rng.below(2) == 0;
    std::vector<double> scores(n);
    std::vector<bool> positive(n);
    std::vector<int> truth(n);
    for (std::size_t i = 0; i < n; ++i) {
      positive[i] = rng.below(2) == 1;
      truth[i] = positive[i] ? 1 : 0;
      const double s = rng.uniform() * 0.6 + (positive[i] ? 0.3 : 0.0);
      scores[i] = coarse ? std::round(s * 10) / 10 : s;
    }
    positive[0] = true;
    truth[0] = 1;
    positive[1] = false;
    truth[1] = 0;
    Tensor<double> two({n, 2});
    for (std::size_t i = 0; i < n; ++i) {
      two.at(i, 1) = scores[i];
      two.at(i, 0) = 1 - scores[i];
    }
    const double expected = oracle::mann_whitney_auc(scores, positive);
    EXPECT_NEAR(roc_auc(two, truth, 1).auc, expected, 1e-12) << "trial " << trial;
  }
}

TEST(Auc, ExtremesAndTies) {
  const std::vector<int> truth{0, 0, 1, 1};
  EXPECT_DOUBLE_EQ(roc_auc(column({0.1, 0.2, 0.8, 0.9}), truth, 0).auc, 0.0);
  Tensor<double> two({4, 2}, std::vector<double>{0.9, 0.1, 0.8, 0.2, 0.2, 0.8, 0.1, 0.9});
  EXPECT_DOUBLE_EQ(roc_auc(two, truth, 1).auc, 1.0);
  EXPECT_DOUBLE_EQ(roc_auc(two, truth, 0).auc, 1.0);
  Tensor<double> tied({4, 2}, 0.5);
  const auto r = roc_auc(tied, truth, 1);
  EXPECT_DOUBLE_EQ(r.auc, 0.5);
  EXPECT_EQ(r.curve.fpr.size(), 2u);
  EXPECT_THROW(roc_auc(two, std::vector<int>{1, 1, 1, 1}, 1), DataError);
}

TEST(Auc, CurveIsMonotone) {
  Rng rng(3);
  const std::size_t n = 50;
  Tensor<double> s({n, 3});
  std::vector<int> truth(n);
  for (std::size_t i = 0; i < n; ++i) {
    truth[i] = static_cast<int>(i % 3);
    for (std::size_t j = 0; j < 3; ++j) s.at(i, j) = rng.uniform();
  }
  const auto r = roc_auc(s, truth, 2);
  EXPECT_EQ(r.curve.fpr.front(), 0.0);
  EXPECT_EQ(r.curve.tpr.front(), 0.0);
  EXPECT_TRUE(std::isinf(r.curve.thresholds.front()));
  EXPECT_EQ(r.curve.fpr.back(), 1.0);
  EXPECT_EQ(r.curve.tpr.back(), 1.0);
  for (std::size_t i = 1; i < r.curve.fpr.size(); ++i) {
    EXPECT_GE(r.curve.fpr[i], r.curve.fpr[i - 1]);
    EXPECT_GE(r.curve.tpr[i], r.curve.tpr[i - 1]);
    EXPECT_LT(r.curve.thresholds[i], r.curve.thresholds[i - 1]);
  }
}

TEST(Evaluate, SoftmaxAndSigmoidOutputs) {
  Tensor<double> probs({4, 3}, std::vector<double>{0.7, 0.2, 0.1, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4, 0.5, 0.4, 0.1});
  const std::vector<int> truth{0, 1, 2, 1};
  const auto r = evaluate(probs, truth, {"a", "b", "c"});
  EXPECT_DOUBLE_EQ(r.accuracy, 0.75);
  EXPECT_EQ(r.matrix.at(1, 0), 1u);
  ASSERT_TRUE(r.macro_auc.has_value());
  EXPECT_EQ(r.roc.size(), 3u);

  const auto bin = evaluate(column({0.9, 0.4, 0.6, 0.2}), std::vector<int>{1, 1, 0, 0}, {"neg", "pos"});
  EXPECT_DOUBLE_EQ(bin.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(bin.roc[1]->auc, 0.75);

  const auto one_class = evaluate(probs, std::vector<int>{0, 0, 0, 0}, {"a", "b", "c"});
  EXPECT_FALSE(one_class.roc[0].has_value());
  EXPECT_FALSE(one_class.macro_auc.has_value());
  EXPECT_THROW(evaluate(probs, truth, {"a", "b"}), ShapeError);
}

TEST(Evaluate, WritesCsvFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "leancnn_metrics_out";
  std::filesystem::remove_all(dir);
  Tensor<double> probs({4, 2}, std::vector<double>{0.9, 0.1, 0.3, 0.7, 0.6, 0.4, 0.2, 0.8});
  write_evaluation(evaluate(probs, std::vector<int>{0, 1, 1, 1}, {"benign", "malignant"}), dir);
  std::ifstream confusion(dir / "confusion.csv");
  std::string header, row0;
  std::getline(confusion, header);
  std::getline(confusion, row0);
  EXPECT_EQ(header, "true\\predicted,benign,malignant");
  EXPECT_EQ(row0, "benign,1,0");
  std::ifstream metrics(dir / "metrics.csv");
  std::getline(metrics, header);
  EXPECT_EQ(header, "class,precision,recall,f1");
  EXPECT_TRUE(std::filesystem::exists(dir / "roc_malignant.csv"));
  EXPECT_NE(render_evaluation(evaluate(probs, std::vector<int>{0, 1, 1, 1}, {"benign", "malignant"}))
                .find("accuracy: 0.750000"),
            std::string::npos);
}
