#include "gipad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gipad/error.hpp"

namespace gipad {

std::size_t ScoreSet::count(int label) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
}

namespace {

void require_both(const ScoreSet& s, const char* what) {
  if (s.scores.size() != s.labels.size()) throw ConfigError("score set: size mismatch");
  if (s.count(kBonafide) == 0 || s.count(kAttack) == 0) {
    throw UndefinedMetricError(std::string(what) + ": needs both bonafide and attack scores");
  }
}

}  // namespace

Rates rates_at(const ScoreSet& s, double tau) {
  require_both(s, "rates_at");
  std::size_t fa = 0, fr = 0, nb = 0, na = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.labels[i] == kBonafide) {
      ++nb;
      if (s.scores[i] < tau) ++fr;
    } else {
      ++na;
      if (s.scores[i] >= tau) ++fa;
    }
  }
  return {static_cast<double>(fa) / na, static_cast<double>(fr) / nb,
          static_cast<double>(s.size() - fa - fr) / s.size()};
}

std::vector<double> sweep_thresholds(const ScoreSet& s) {
  std::vector<double> v = s.scores;
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  std::vector<double> t;
  if (v.empty()) return t;
  t.reserve(v.size() + 1);
  t.push_back(v.front() - 1.0);
  for (std::size_t i = 0; i + 1 < v.size(); ++i) t.push_back(v[i] + (v[i + 1] - v[i]) / 2.0);
  t.push_back(v.back() + 1.0);
  return t;
}

EerResult eer(const ScoreSet& s) {
  require_both(s, "eer");
  EerResult best{0.0, 0.0};
  double best_gap = INFINITY;
  for (double tau : sweep_thresholds(s)) {
    const Rates r = rates_at(s, tau);
    const double gap = std::abs(r.far - r.frr);
    if (gap < best_gap) {
      best_gap = gap;
      best = {(r.far + r.frr) / 2.0, tau};
    }
  }
  return best;
}

OperatingPoint dev_eer_operating_point(const ScoreSet& dev) {
  return {eer(dev).threshold, ThresholdSource::DevEer};
}

double hter(const ScoreSet& test, const OperatingPoint& op) {
  const Rates r = rates_at(test, op.threshold);
  return (r.far + r.frr) / 2.0;
}

double auc_roc(const ScoreSet& s) {
  require_both(s, "auc_roc");
  // Rank-sum form of the Mann-Whitney statistic with midranks for ties.
  std::vector<std::size_t> idx(s.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s.scores[a] < s.scores[b]; });
  double greater = 0.0;  // count of (bonafide, attack) pairs ordered correctly, ties as 1/2
  std::size_t attacks_below = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::size_t tie_b = 0, tie_a = 0;
    while (j < idx.size() && s.scores[idx[j]] == s.scores[idx[i]]) {
      (s.labels[idx[j]] == kBonafide ? tie_b : tie_a)++;
      ++j;
    }
    greater += static_cast<double>(tie_b) * attacks_below + 0.5 * tie_b * tie_a;
    attacks_below += tie_a;
    i = j;
  }
  return greater / (static_cast<double>(s.count(kBonafide)) * s.count(kAttack));
}

double youden_max(const ScoreSet& s) {
  require_both(s, "youden_max");
  double best = -INFINITY;
  for (double tau : sweep_thresholds(s)) {
    const Rates r = rates_at(s, tau);
    best = std::max(best, (1.0 - r.frr) - r.far);
  }
  return best;
}

ApcerBpcer apcer_bpcer(const ScoreSet& s, double tau) {
  const Rates r = rates_at(s, tau);
  return {r.far, r.frr};
}

double acer(double apcer, double bpcer) { return (apcer + bpcer) / 2.0; }

MetricReport evaluate(const ScoreSet& test, const OperatingPoint& op) {
  MetricReport m;
  const Rates r = rates_at(test, op.threshold);
  m.accuracy = r.accuracy;
  m.accuracy_at_half = rates_at(test, 0.5).accuracy;
  m.auc = auc_roc(test);
  m.eer = eer(test).eer;
  m.far = r.far;
  m.frr = r.frr;
  m.hter = (r.far + r.frr) / 2.0;
  m.yi = youden_max(test);
  m.apcer = r.far;
  m.bpcer = r.frr;
  m.acer = acer(m.apcer, m.bpcer);
  m.threshold = op.threshold;
  m.threshold_source = op.source == ThresholdSource::DevEer ? "dev_eer" : "fixed";
  m.n_bonafide = test.count(kBonafide);
  m.n_attack = test.count(kAttack);
  return m;
}

std::string report_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["accuracy"] = r.accuracy;
  j["auc"] = r.auc;
  j["eer"] = r.eer;
  j["far"] = r.far;
  j["frr"] = r.frr;
  j["hter"] = r.hter;
  j["yi"] = r.yi;
  j["apcer"] = r.apcer;
  j["bpcer"] = r.bpcer;
  j["acer"] = r.acer;
  j["threshold"] = r.threshold;
  j["n_bonafide"] = r.n_bonafide;
  j["n_attack"] = r.n_attack;
  j["threshold_source"] = r.threshold_source;
  j["accuracy_at_0.5"] = r.accuracy_at_half;
  return j.dump(2);
}

ScoreSet select(const std::vector<ScoreRecord>& records, Split split) {
  ScoreSet s;
  for (const ScoreRecord& r : records)
    if (r.split == split) s.add(r.score, r.label);
  return s;
}

void write_scores(const std::filesystem::path& path, const std::vector<ScoreRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write scores " + path.string());
  out << "score,label,split\n";
  char buf[32];
  for (const ScoreRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.score);
    out << buf << ',' << label_name(r.label) << ',' << split_name(r.split) << '\n';
  }
  if (!out) throw DataError("failed writing scores " + path.string());
}

std::vector<ScoreRecord> read_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open scores " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "score,label,split") throw DataError(path.string() + ":1: bad header");
  std::vector<ScoreRecord> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string score, label, split;
    std::getline(ss, score, ',');
    std::getline(ss, label, ',');
    std::getline(ss, split, ',');
    try {
      out.push_back({std::stod(score), parse_label(label), parse_split(split)});
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_sweep(const std::filesystem::path& path, const ScoreSet& s) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write sweep " + path.string());
  out << "threshold,far,frr\n";
  char buf[96];
  for (double tau : sweep_thresholds(s)) {
    const Rates r = rates_at(s, tau);
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", tau, r.far, r.frr);
    out << buf;
  }
}

}  // namespace gipad
