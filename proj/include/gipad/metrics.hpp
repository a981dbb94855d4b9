#pragma once

// PAD evaluation metrics. Higher scores mean "more bonafide"; bonafide is the
// positive class. All rates are fractions.

#include <filesystem>
#include <string>
#include <vector>

#include "gipad/data.hpp"

namespace gipad {

struct ScoreSet {
  std::vector<double> scores;
  std::vector<int> labels;  // kBonafide or kAttack

  void add(double score, int label) {
    scores.push_back(score);
    labels.push_back(label);
  }
  std::size_t size() const { return scores.size(); }
  std::size_t count(int label) const;
};

struct Rates {
  double far;  // attacks with score >= tau
  double frr;  // bonafide with score < tau
  double accuracy;
};

Rates rates_at(const ScoreSet& s, double tau);

// Sweep thresholds: min - 1, every midpoint between adjacent distinct scores,
// max + 1; ascending.
std::vector<double> sweep_thresholds(const ScoreSet& s);

struct EerResult {
  double eer;
  double threshold;
};
// Threshold minimizing |FAR - FRR| over the sweep (ties to the smaller
// threshold); EER is the mean of FAR and FRR there.
EerResult eer(const ScoreSet& s);

enum class ThresholdSource { DevEer, Fixed };

struct OperatingPoint {
  double threshold = 0.5;
  ThresholdSource source = ThresholdSource::Fixed;
};

OperatingPoint dev_eer_operating_point(const ScoreSet& dev);

double hter(const ScoreSet& test, const OperatingPoint& op);
double auc_roc(const ScoreSet& s);
double youden_max(const ScoreSet& s);

struct ApcerBpcer {
  double apcer;
  double bpcer;
};
ApcerBpcer apcer_bpcer(const ScoreSet& s, double tau);
double acer(double apcer, double bpcer);

struct MetricReport {
  double accuracy = 0;
  double accuracy_at_half = 0;
  double auc = 0;
  double eer = 0;
  double far = 0;
  double frr = 0;
  double hter = 0;
  double yi = 0;
  double apcer = 0;
  double bpcer = 0;
  double acer = 0;
  double threshold = 0;
  std::string threshold_source;
  std::size_t n_bonafide = 0;
  std::size_t n_attack = 0;
};

MetricReport evaluate(const ScoreSet& test, const OperatingPoint& op);
std::string report_json(const MetricReport& r);

struct ScoreRecord {
  double score;
  int label;
  Split split;
};

ScoreSet select(const std::vector<ScoreRecord>& records, Split split);
void write_scores(const std::filesystem::path& path, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_scores(const std::filesystem::path& path);

// Writes `threshold,far,frr` for every swept threshold.
void write_sweep(const std::filesystem::path& path, const ScoreSet& s);

}  // namespace gipad
