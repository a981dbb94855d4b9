#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include <json.hpp>

#include "checks.hpp"
#include "gipad/error.hpp"
#include "gipad/metrics.hpp"
#include "gipad/rng.hpp"

using namespace gipad;

namespace {

ScoreSet make(std::vector<double> bona, std::vector<double> att) {
  ScoreSet s;
  for (double v : bona) s.add(v, kBonafide);
  for (double v : att) s.add(v, kAttack);
  return s;
}

ScoreSet random_set(Rng& rng, int n, bool coarse) {
  ScoreSet s;
  s.add(coarse ? std::round(rng.uniform() * 4) / 4 : rng.uniform(), kBonafide);
  s.add(coarse ? std::round(rng.uniform() * 4) / 4 : rng.uniform(), kAttack);
  for (int i = 2; i < n; ++i) {
    const double v = coarse ? std::round(rng.uniform() * 4) / 4 : rng.uniform();
    s.add(v, rng.bernoulli(0.5) ? kBonafide : kAttack);
  }
  return s;
}

// Brute-force EER threshold: try every distinct score and +inf as a cut.
double brute_eer_threshold(const ScoreSet& s) {
  std::vector<double> cuts = s.scores;
  cuts.push_back(INFINITY);
  std::sort(cuts.begin(), cuts.end());
  double best_gap = INFINITY, best = 0;
  for (double c : cuts) {
    double fa = 0, fr = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s.labels[i] == kBonafide) {
        ++nb;
        fr += s.scores[i] < c;
      } else {
        ++na;
        fa += s.scores[i] >= c;
      }
    }
    const double gap = std::abs(fa / na - fr / nb);
    if (gap < best_gap) {
      best_gap = gap;
      best = c;
    }
  }
  return best;
}

}  // namespace

TEST(Rates, SeparableExample) {
  const ScoreSet s = make({0.9, 0.8}, {0.1, 0.2});
  const Rates r = rates_at(s, 0.5);
  EXPECT_EQ(r.far, 0.0);
  EXPECT_EQ(r.frr, 0.0);
  EXPECT_EQ(r.accuracy, 1.0);
}

TEST(Rates, ThresholdBelowEverything) {
  const ScoreSet s = make({0.9, 0.3}, {0.1, 0.7, 0.2});
  const Rates r = rates_at(s, -INFINITY);
  EXPECT_EQ(r.far, 1.0);
  EXPECT_EQ(r.frr, 0.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 2.0 / 5.0);
}

TEST(Rates, ScoreEqualToThresholdIsAccepted) {
  const ScoreSet s = make({0.5}, {0.5});
  const Rates r = rates_at(s, 0.5);
  EXPECT_EQ(r.far, 1.0);
  EXPECT_EQ(r.frr, 0.0);
}

TEST(Eer, Extremes) {
  EXPECT_EQ(eer(make({0.9, 0.8}, {0.1, 0.2})).eer, 0.0);
  // Fully inverted scores: FAR = FRR = 1 at the middle cut.
  EXPECT_EQ(eer(make({0.1, 0.2}, {0.9, 0.8})).eer, 1.0);
  // All tied: the only cuts accept or reject everything.
  EXPECT_EQ(eer(make({0.5, 0.5}, {0.5, 0.5})).eer, 0.5);
  const EerResult r = eer(make({0.9, 0.8}, {0.1, 0.2}));
  EXPECT_GT(r.threshold, 0.2);
  EXPECT_LT(r.threshold, 0.8);
}

TEST(Eer, SweepThresholdsBracketScores) {
  const ScoreSet s = make({0.3, 0.3, 0.7}, {0.1});
  const std::vector<double> t = sweep_thresholds(s);
  const std::vector<double> want = {0.1 - 1.0, 0.2, 0.5, 0.7 + 1.0};
  ASSERT_EQ(t.size(), want.size());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_DOUBLE_EQ(t[i], want[i]);
}

TEST(Auc, Extremes) {
  EXPECT_EQ(auc_roc(make({0.9, 0.8}, {0.1, 0.2})), 1.0);
  EXPECT_EQ(auc_roc(make({0.5, 0.5}, {0.5, 0.5})), 0.5);
  EXPECT_EQ(auc_roc(make({0.1}, {0.9})), 0.0);
}

TEST(Youden, Extremes) {
  EXPECT_EQ(youden_max(make({0.9, 0.8}, {0.1, 0.2})), 1.0);
  EXPECT_EQ(youden_max(make({0.5, 0.5}, {0.5, 0.5})), 0.0);
}

TEST(Hter, WorkedExample) {
  // 2 of 100 attacks accepted, 4 of 100 bonafide rejected.
  ScoreSet s;
  for (int i = 0; i < 100; ++i) s.add(i < 4 ? 0.2 : 0.8, kBonafide);
  for (int i = 0; i < 100; ++i) s.add(i < 2 ? 0.8 : 0.2, kAttack);
  EXPECT_DOUBLE_EQ(hter(s, {0.5, ThresholdSource::Fixed}), 0.03);
}

TEST(Hter, DevThresholdAppliedToTest) {
  Rng rng(1);
  for (int t = 0; t < 100; ++t) {
    const ScoreSet dev = random_set(rng, 3 + static_cast<int>(rng.uniform_int(15)), t % 2 == 0);
    const ScoreSet test = random_set(rng, 3 + static_cast<int>(rng.uniform_int(15)), t % 2 == 0);
    const OperatingPoint op = dev_eer_operating_point(dev);
    ASSERT_EQ(op.source, ThresholdSource::DevEer);
    // Any threshold that induces the same cut on dev gives the same dev rates;
    // what matters on test is where op.threshold falls, so compare rates on dev.
    const Rates got = rates_at(dev, op.threshold);
    const Rates want = rates_at(dev, brute_eer_threshold(dev));
    EXPECT_EQ(std::abs(got.far - got.frr), std::abs(want.far - want.frr));

    double fa = 0, fr = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (test.labels[i] == kBonafide) {
        ++nb;
        fr += test.scores[i] < op.threshold;
      } else {
        ++na;
        fa += test.scores[i] >= op.threshold;
      }
    }
    EXPECT_DOUBLE_EQ(hter(test, op), (fa / na + fr / nb) / 2);
  }
}

TEST(Acer, WorkedExample) {
  const double v = acer(0.00, 0.83);
  EXPECT_NEAR(v, 0.415, 1e-15);
  // Two-decimal figure under round-half-up.
  EXPECT_NEAR(v, 0.42, 0.005 + 1e-12);
}

TEST(Acer, MatchesRatesAtThreshold) {
  const ScoreSet s = make({0.9, 0.4, 0.6}, {0.1, 0.55});
  const ApcerBpcer ab = apcer_bpcer(s, 0.5);
  EXPECT_DOUBLE_EQ(ab.apcer, 0.5);
  EXPECT_DOUBLE_EQ(ab.bpcer, 1.0 / 3.0);
}

TEST(MetricOracle, RandomSweepAgrees) {
  const checks::MetricSweep r = checks::metric_oracle_sweep(300, 2);
  EXPECT_EQ(r.trials, 300);
  EXPECT_EQ(r.mismatches, 0) << r.first_failure;
}

TEST(MetricProperties, MonotoneTransformInvariance) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const ScoreSet s = random_set(rng, 2 + static_cast<int>(rng.uniform_int(19)), t % 2 == 0);
    ScoreSet f = s;
    for (double& v : f.scores) v = 3.0 * std::exp(2.0 * v) + 1.0;
    EXPECT_EQ(eer(s).eer, eer(f).eer);
    EXPECT_EQ(auc_roc(s), auc_roc(f));
    EXPECT_EQ(youden_max(s), youden_max(f));
  }
}

TEST(MetricProperties, HterBetweenRates) {
  Rng rng(4);
  for (int t = 0; t < 200; ++t) {
    const ScoreSet s = random_set(rng, 2 + static_cast<int>(rng.uniform_int(19)), false);
    const double tau = rng.uniform();
    const Rates r = rates_at(s, tau);
    const double h = hter(s, {tau, ThresholdSource::Fixed});
    EXPECT_GE(h, std::min(r.far, r.frr));
    EXPECT_LE(h, std::max(r.far, r.frr));
  }
}

TEST(MetricProperties, AucNegationSymmetry) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    ScoreSet s = random_set(rng, 2 + static_cast<int>(rng.uniform_int(19)), t % 2 == 0);
    const double a = auc_roc(s);
    for (double& v : s.scores) v = -v;
    EXPECT_NEAR(auc_roc(s), 1.0 - a, 1e-15);
  }
}

TEST(MetricProperties, EmptyClassIsUndefined) {
  const ScoreSet only_bona = make({0.1, 0.9}, {});
  const ScoreSet only_att = make({}, {0.1, 0.9});
  EXPECT_THROW(eer(only_bona), UndefinedMetricError);
  EXPECT_THROW(auc_roc(only_att), UndefinedMetricError);
  EXPECT_THROW(hter(only_bona, {}), UndefinedMetricError);
  EXPECT_THROW(youden_max(only_att), UndefinedMetricError);
}

TEST(Report, JsonKeys) {
  const MetricReport r = evaluate(make({0.9, 0.3}, {0.1, 0.7}), {0.5, ThresholdSource::Fixed});
  const auto j = nlohmann::json::parse(report_json(r));
  for (const char* key : {"accuracy", "auc", "eer", "far", "frr", "hter", "yi", "apcer", "bpcer",
                          "acer", "threshold", "n_bonafide", "n_attack", "threshold_source",
                          "accuracy_at_0.5"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_EQ(j["threshold_source"], "fixed");
  EXPECT_EQ(j["n_bonafide"], 2);
  EXPECT_DOUBLE_EQ(j["hter"].get<double>(), 0.5);
}

TEST(Report, ScoreCsvRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "gipad_scores_rt.csv";
  const std::vector<ScoreRecord> rec = {
      {0.123456789012345678, kBonafide, Split::Test},
      {1e-300, kAttack, Split::Dev},
      {0.999999999999, kAttack, Split::Test},
  };
  write_scores(path, rec);
  const auto back = read_scores(path);
  ASSERT_EQ(back.size(), rec.size());
  for (std::size_t i = 0; i < rec.size(); ++i) {
    EXPECT_EQ(back[i].score, rec[i].score);
    EXPECT_EQ(back[i].label, rec[i].label);
    EXPECT_EQ(back[i].split, rec[i].split);
  }
  EXPECT_EQ(select(back, Split::Test).size(), 2u);
  std::filesystem::remove(path);
}
