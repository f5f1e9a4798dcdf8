#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dca/error.hpp"
#include "dca/losses.hpp"
#include "dca/tensor.hpp"

namespace dca {

// Per-sample categorical predictions [N, C], with optional labels.
struct ProbBatch {
  Tensor probs;
  std::optional<std::vector<int>> labels;

  std::size_t size() const { return probs.rank() == 2 ? probs.dim(0) : 0; }
  std::size_t classes() const { return probs.rank() == 2 ? probs.dim(1) : 0; }

  void validate(double tol = 1e-6) const {
    if (probs.rank() != 2) throw DimensionError("probability batch must be [N, C]");
    for (std::size_t r = 0; r < probs.dim(0); ++r) {
      double sum = 0.0;
      for (double p : probs.row(r)) {
        if (!(p >= 0.0 && p <= 1.0)) throw DataError("probability outside [0, 1] in row " + std::to_string(r));
        sum += p;
      }
      if (std::abs(sum - 1.0) > tol) throw DataError("probability row " + std::to_string(r) + " does not sum to 1");
    }
    if (labels) {
      if (labels->size() != probs.dim(0)) throw DimensionError("label count does not match batch");
      for (int y : *labels)
        if (y < 0 || static_cast<std::size_t>(y) >= probs.dim(1)) throw DataError("label out of range");
    }
  }

  const std::vector<int>& require_labels() const {
    if (!labels) throw DataError("metric requires labels");
    return *labels;
  }
};

inline std::size_t argmax(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

// ---------------------------------------------------------------------------
// Predictive quality

inline double accuracy(const ProbBatch& b) {
  const auto& y = b.require_labels();
  std::size_t hits = 0;
  for (std::size_t r = 0; r < b.size(); ++r) hits += argmax(b.probs.row(r)) == static_cast<std::size_t>(y[r]);
  return static_cast<double>(hits) / static_cast<double>(b.size());
}

inline double mean_nll(const ProbBatch& b) {
  const auto& y = b.require_labels();
  double total = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r)
    total -= std::log(std::max(b.probs(r, static_cast<std::size_t>(y[r])), kProbFloor));
  return total / static_cast<double>(b.size());
}

// Expected calibration error over equal-width confidence bins (lo, hi]; a
// confidence of exactly 0 falls in the first bin.
inline double ece(const ProbBatch& b, std::size_t bins = 15) {
  const auto& y = b.require_labels();
  if (bins == 0) throw ConfigError("ece needs at least one bin");
  if (b.size() == 0) throw DataError("ece of an empty batch");
  std::vector<double> conf(bins, 0.0), hits(bins, 0.0), count(bins, 0.0);
  for (std::size_t r = 0; r < b.size(); ++r) {
    const auto row = b.probs.row(r);
    const std::size_t pred = argmax(row);
    const double c = row[pred];
    auto bin = static_cast<std::ptrdiff_t>(std::ceil(c * static_cast<double>(bins))) - 1;
    bin = std::clamp<std::ptrdiff_t>(bin, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    conf[static_cast<std::size_t>(bin)] += c;
    hits[static_cast<std::size_t>(bin)] += pred == static_cast<std::size_t>(y[r]) ? 1.0 : 0.0;
    count[static_cast<std::size_t>(bin)] += 1.0;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < bins; ++k)
    if (count[k] > 0) total += std::abs(hits[k] - conf[k]);  // (|b|/N) * |acc - conf| = |hits - sum conf| / N
  return total / static_cast<double>(b.size());
}

inline double brier(const ProbBatch& b) {
  const auto& y = b.require_labels();
  double total = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r)
    for (std::size_t c = 0; c < b.classes(); ++c) {
      const double d = b.probs(r, c) - (c == static_cast<std::size_t>(y[r]) ? 1.0 : 0.0);
      total += d * d;
    }
  return total / static_cast<double>(b.size());
}

// ---------------------------------------------------------------------------
// Out-of-distribution detection. In-domain samples are the positive class and
// a sample is predicted in-domain when its score is >= the threshold.

struct OodScoreSet {
  std::vector<double> in_scores;
  std::vector<double> out_scores;
};

enum class OodScore { max_prob, neg_entropy };

inline double ood_score(std::span<const double> probs, OodScore kind) {
  if (kind == OodScore::max_prob) return *std::max_element(probs.begin(), probs.end());
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return -h;
}

inline std::vector<double> ood_scores(const ProbBatch& b, OodScore kind = OodScore::max_prob) {
  std::vector<double> out(b.size());
  for (std::size_t r = 0; r < b.size(); ++r) out[r] = ood_score(b.probs.row(r), kind);
  return out;
}

struct OodReport {
  double fpr_at_95_tpr = 0.0;
  double detection_error = 0.0;
  double auroc = 0.0;
  double aupr_in = 0.0;
  double aupr_out = 0.0;
};

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

namespace detail {

// Cumulative (tp, fp) after each distinct score, sweeping from high to low.
struct SweepPoint {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t group_pos = 0;  // positives tied at this score
  std::size_t group_neg = 0;
};

inline std::vector<SweepPoint> sweep(std::span<const double> pos, std::span<const double> neg) {
  std::vector<std::pair<double, bool>> all;
  all.reserve(pos.size() + neg.size());
  for (double s : pos) all.emplace_back(s, true);
  for (double s : neg) all.emplace_back(s, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<SweepPoint> pts;
  SweepPoint cur;
  for (std::size_t k = 0; k < all.size();) {
    const double s = all[k].first;
    cur.group_pos = cur.group_neg = 0;
    for (; k < all.size() && all[k].first == s; ++k) (all[k].second ? cur.group_pos : cur.group_neg)++;
    cur.tp += cur.group_pos;
    cur.fp += cur.group_neg;
    pts.push_back(cur);
  }
  return pts;
}

// Step-wise average precision: sum over thresholds of (R_k - R_{k-1}) * P_k.
inline double average_precision(std::span<const double> pos, std::span<const double> neg) {
  double ap = 0.0, prev_recall = 0.0;
  for (const auto& p : sweep(pos, neg)) {
    const double recall = static_cast<double>(p.tp) / static_cast<double>(pos.size());
    const double precision = static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

inline void check_scores(const OodScoreSet& s) {
  if (s.in_scores.empty() || s.out_scores.empty()) throw DataError("OOD metrics need non-empty in and out score sets");
  for (const auto* v : {&s.in_scores, &s.out_scores})
    for (double x : *v)
      if (!std::isfinite(x)) throw NumericError("non-finite OOD score");
}

}  // namespace detail

// ROC polyline from (0,0) to (1,1), one vertex per distinct score.
inline std::vector<RocPoint> roc_curve(const OodScoreSet& s) {
  detail::check_scores(s);
  const double ni = static_cast<double>(s.in_scores.size());
  const double no = static_cast<double>(s.out_scores.size());
  std::vector<RocPoint> out{{0.0, 0.0}};
  for (const auto& p : detail::sweep(s.in_scores, s.out_scores))
    out.push_back({static_cast<double>(p.fp) / no, static_cast<double>(p.tp) / ni});
  return out;
}

inline OodReport ood_metrics(const OodScoreSet& s) {
  detail::check_scores(s);
  const double ni = static_cast<double>(s.in_scores.size());
  const double no = static_cast<double>(s.out_scores.size());
  OodReport r;
  r.fpr_at_95_tpr = 1.0;
  r.detection_error = 0.5;  // threshold above every score
  double pairs = 0.0;
  for (const auto& p : detail::sweep(s.in_scores, s.out_scores)) {
    const double tpr = static_cast<double>(p.tp) / ni;
    const double fpr = static_cast<double>(p.fp) / no;
    // In-domain samples of this group beat every OOD sample below it and tie the group's.
    pairs += static_cast<double>(p.group_pos) * (static_cast<double>(s.out_scores.size() - p.fp) +
                                                 0.5 * static_cast<double>(p.group_neg));
    if (tpr >= 0.95) r.fpr_at_95_tpr = std::min(r.fpr_at_95_tpr, fpr);
    r.detection_error = std::min(r.detection_error, 0.5 * (fpr + 1.0 - tpr));
  }
  r.auroc = pairs / (ni * no);
  r.aupr_in = detail::average_precision(s.in_scores, s.out_scores);
  std::vector<double> neg_in(s.in_scores.size()), neg_out(s.out_scores.size());
  std::transform(s.in_scores.begin(), s.in_scores.end(), neg_in.begin(), [](double v) { return -v; });
  std::transform(s.out_scores.begin(), s.out_scores.end(), neg_out.begin(), [](double v) { return -v; });
  r.aupr_out = detail::average_precision(neg_out, neg_in);
  return r;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
  double accuracy = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  double brier = 0.0;
  std::size_t ece_bins = 15;
  std::optional<OodReport> ood;
};

inline MetricsReport evaluate(const ProbBatch& b, std::size_t ece_bins = 15) {
  b.validate();
  return {accuracy(b), mean_nll(b), ece(b, ece_bins), brier(b), ece_bins, std::nullopt};
}

inline nlohmann::json to_json(const OodReport& r) {
  return {{"fpr_at_95_tpr", r.fpr_at_95_tpr},
          {"detection_error", r.detection_error},
          {"auroc", r.auroc},
          {"aupr_in", r.aupr_in},
          {"aupr_out", r.aupr_out}};
}

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j{{"accuracy", r.accuracy}, {"nll", r.nll}, {"ece", r.ece}, {"brier", r.brier}, {"ece_bins", r.ece_bins}};
  if (r.ood) j["ood"] = to_json(*r.ood);
  return j;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string to_csv(const MetricsReport& r) {
  std::string head = "accuracy,nll,ece,brier,ece_bins";
  std::string row = format_double(r.accuracy) + "," + format_double(r.nll) + "," + format_double(r.ece) + "," +
                    format_double(r.brier) + "," + std::to_string(r.ece_bins);
  if (r.ood) {
    head += ",fpr_at_95_tpr,detection_error,auroc,aupr_in,aupr_out";
    row += "," + format_double(r.ood->fpr_at_95_tpr) + "," + format_double(r.ood->detection_error) + "," +
           format_double(r.ood->auroc) + "," + format_double(r.ood->aupr_in) + "," + format_double(r.ood->aupr_out);
  }
  return head + "\n" + row + "\n";
}

// ---------------------------------------------------------------------------
// Aggregation and diversity

namespace detail {
inline void check_aligned(std::span<const ProbBatch> batches) {
  if (batches.empty()) throw DataError("no prediction batches to combine");
  for (const auto& b : batches)
    if (b.probs.shape() != batches.front().probs.shape())
      throw DimensionError("prediction batches are not aligned: " + shape_string(b.probs.shape()) + " vs " +
                           shape_string(batches.front().probs.shape()));
}

// KL(p || q) with q floored at the probability floor; p = 0 terms vanish.
inline double kl(std::span<const double> p, std::span<const double> q) {
  double d = 0.0;
  for (std::size_t c = 0; c < p.size(); ++c)
    if (p[c] > 0.0) d += p[c] * (std::log(p[c]) - std::log(std::max(q[c], kProbFloor)));
  return d;
}
}  // namespace detail

// Probability-space mean over proposals; labels taken from the first batch.
inline ProbBatch aggregate_predictions(std::span<const ProbBatch> per_proposal) {
  detail::check_aligned(per_proposal);
  ProbBatch out{Tensor(per_proposal.front().probs.shape()), per_proposal.front().labels};
  for (const auto& b : per_proposal)
    for (std::size_t i = 0; i < out.probs.size(); ++i) out.probs[i] += b.probs[i];
  const double inv = 1.0 / static_cast<double>(per_proposal.size());
  for (double& v : out.probs.data()) v *= inv;
  return out;
}

// Logit-space alternative: softmax of the mean logits.
inline ProbBatch aggregate_logits(std::span<const Tensor> per_proposal_logits, std::optional<std::vector<int>> labels) {
  if (per_proposal_logits.empty()) throw DataError("no logits to combine");
  Tensor mean(per_proposal_logits.front().shape());
  for (const auto& t : per_proposal_logits) {
    if (t.shape() != mean.shape()) throw DimensionError("logit batches are not aligned");
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += t[i];
  }
  for (double& v : mean.data()) v /= static_cast<double>(per_proposal_logits.size());
  return {softmax(mean), std::move(labels)};
}

struct DiversityReport {
  double pairwise_kl = 0.0;
  double classwise_variance = 0.0;
  double js_divergence = 0.0;
};

inline DiversityReport diversity(std::span<const ProbBatch> per_model) {
  if (per_model.size() < 2) throw DataError("diversity needs at least two models");
  detail::check_aligned(per_model);
  const std::size_t m = per_model.size();
  const std::size_t n = per_model.front().size();
  const std::size_t classes = per_model.front().classes();
  if (n == 0) throw DataError("diversity over an empty batch");
  const double md = static_cast<double>(m);
  DiversityReport r;
  std::vector<double> mean(classes);
  for (std::size_t x = 0; x < n; ++x) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (const auto& b : per_model)
      for (std::size_t c = 0; c < classes; ++c) mean[c] += b.probs(x, c);
    for (double& v : mean) v /= md;
    // Where every model agrees, use the shared value itself: sum / m can be an
    // ulp off and would leave tiny non-zero variance and divergence.
    for (std::size_t c = 0; c < classes; ++c) {
      const double first = per_model.front().probs(x, c);
      bool same = true;
      for (const auto& b : per_model) same = same && b.probs(x, c) == first;
      if (same) mean[c] = first;
    }

    double pw = 0.0, js = 0.0, var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto pi = per_model[i].probs.row(x);
      for (std::size_t j = 0; j < m; ++j)
        if (i != j) pw += detail::kl(pi, per_model[j].probs.row(x));
      js += detail::kl(pi, mean);
    }
    for (std::size_t c = 0; c < classes; ++c) {
      double ss = 0.0;
      for (const auto& b : per_model) ss += (b.probs(x, c) - mean[c]) * (b.probs(x, c) - mean[c]);
      var += ss / (md - 1.0);
    }
    r.pairwise_kl += pw / (md * (md - 1.0));
    r.js_divergence += js / md;
    r.classwise_variance += var;
  }
  const double nd = static_cast<double>(n);
  r.pairwise_kl /= nd;
  r.js_divergence /= nd;
  r.classwise_variance /= nd;
  return r;
}

inline nlohmann::json to_json(const DiversityReport& r) {
  return {{"pairwise_kl", r.pairwise_kl}, {"classwise_variance", r.classwise_variance}, {"js_divergence", r.js_divergence}};
}

inline std::string to_csv(const DiversityReport& r) {
  return "pairwise_kl,classwise_variance,js_divergence\n" + format_double(r.pairwise_kl) + "," +
         format_double(r.classwise_variance) + "," + format_double(r.js_divergence) + "\n";
}

}  // namespace dca
