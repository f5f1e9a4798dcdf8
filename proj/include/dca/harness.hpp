#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dca/bank.hpp"
#include "dca/checkpoint.hpp"
#include "dca/data.hpp"
#include "dca/dcwa.hpp"
#include "dca/inference.hpp"
#include "dca/metrics.hpp"
#include "dca/trainer.hpp"

namespace dca {

// ---------------------------------------------------------------------------
// Methods

enum class MethodKind { standard, deep_ensemble, dca, dcwa };

struct Method {
  MethodKind kind = MethodKind::standard;
  Granularity granularity = Granularity::modelwise;
  LossKind loss = LossKind::nll;
  std::size_t n = 0;  // 0 = experiment default

  std::string name() const {
    switch (kind) {
      case MethodKind::standard: return "standard";
      case MethodKind::deep_ensemble: return "deep_ensemble";
      case MethodKind::dca: return "dca";
      case MethodKind::dcwa: return "dcwa";
    }
    return "?";
  }
  bool uses_bank() const { return kind == MethodKind::dca || kind == MethodKind::dcwa; }

  // e.g. "standard", "deep_ensemble", "dca:modelwise:cel", "dcwa:layerwise:cel".
  std::string label() const {
    if (!uses_bank()) return name();
    return name() + ":" + std::string(to_string(granularity)) + ":" + (loss == LossKind::cel ? "cel" : "nll");
  }

  friend bool operator==(const Method&, const Method&) = default;
};

inline LossKind parse_loss(std::string_view s) {
  if (s == "nll" || s == "NLL") return LossKind::nll;
  if (s == "cel" || s == "CEL") return LossKind::cel;
  throw ConfigError("unknown loss '" + std::string(s) + "' (expected nll or cel)");
}

inline Method parse_method(std::string_view text) {
  std::vector<std::string> parts;
  std::string cur;
  for (char ch : text) {
    if (ch == ':') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  Method m;
  const std::string& head = parts[0];
  if (head == "standard" || head == "deep_ensemble") {
    if (parts.size() != 1) throw ConfigError("method '" + std::string(text) + "' takes no options");
    m.kind = head == "standard" ? MethodKind::standard : MethodKind::deep_ensemble;
    return m;
  }
  if (head != "dca" && head != "dcwa") throw ConfigError("unknown method '" + std::string(text) + "'");
  m.kind = head == "dca" ? MethodKind::dca : MethodKind::dcwa;
  if (parts.size() != 3) throw ConfigError("method '" + std::string(text) + "' must be " + head + ":<granularity>:<loss>");
  m.granularity = parse_granularity(parts[1]);
  m.loss = parse_loss(parts[2]);
  return m;
}

// ---------------------------------------------------------------------------
// Experiment configuration and data

enum class Aggregation { probability, logit };

struct ExperimentConfig {
  ModelSpec model;
  TrainConfig train;
  std::size_t n = 5;
  SyntheticKind data_kind = SyntheticKind::gaussian_clusters;
  SyntheticParams data;
  SyntheticParams ood{4, 1, 250, 0.0, 2.0, 0.0, 1.0};
  std::uint64_t data_seed = 2024;
  std::size_t eval_proposals = 30;
  std::size_t ece_bins = 15;
  OodScore ood_score = OodScore::max_prob;
  Aggregation aggregation = Aggregation::probability;
  std::size_t jobs = 1;
};

struct ExperimentData {
  Dataset train;
  Dataset test;
  Dataset ood;
};

// In-domain synthetic task plus ring_uniform outliers, all standardized with
// the in-domain training statistics.
inline ExperimentData make_experiment_data(const ExperimentConfig& cfg) {
  auto in = make_synthetic(cfg.data_kind, cfg.data, cfg.data_seed);
  SyntheticParams op = cfg.ood;
  op.classes = cfg.data.classes;
  auto out = make_synthetic(SyntheticKind::ring_uniform, op, cfg.data_seed + 1);
  const Standardizer st = Standardizer::fit(in.train);
  return {st.apply(std::move(in.train)), st.apply(std::move(in.test)), st.apply(std::move(out.test))};
}

// ---------------------------------------------------------------------------
// Trained models

// Every method reduces to a list of member parameterizations whose
// predictions are averaged.
struct TrainedModel {
  Method method;
  std::uint64_t seed = 0;
  std::size_t n = 1;
  ModelLayout layout;
  std::vector<std::vector<double>> members;
  std::optional<ParameterBank> bank;
  bool coarse_grain_warning = false;
  TrainLog log;
};

inline std::size_t method_instances(const Method& m, const ExperimentConfig& cfg) {
  if (m.kind == MethodKind::standard) return 1;
  return m.n ? m.n : cfg.n;
}

// Proposals used at test time: all n members for a modelwise bank, otherwise
// eval_proposals draws from a seed-derived stream.
inline std::vector<std::vector<double>> inference_members(const ParameterBank& bank, std::size_t proposals,
                                                          std::uint64_t seed) {
  std::vector<std::vector<double>> out;
  if (bank.granularity() == Granularity::modelwise) {
    for (const auto& p : enumerate_modelwise(bank)) out.push_back(assemble(bank, p));
    return out;
  }
  Rng rng = make_rng(seed, 21);
  for (std::size_t k = 0; k < proposals; ++k) out.push_back(assemble(bank, sample_proposal(bank, rng)));
  return out;
}

inline TrainedModel train_method(const Method& method, const ExperimentConfig& cfg, const Dataset& train,
                                 std::uint64_t seed) {
  TrainedModel tm{method, seed, method_instances(method, cfg), build_layout(cfg.model), {}, std::nullopt, false, {}};
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  switch (method.kind) {
    case MethodKind::standard: {
      auto r = train_standard(cfg.model, train, tc);
      tm.members.push_back(std::move(r.params));
      tm.log = std::move(r.log);
      break;
    }
    case MethodKind::deep_ensemble: {
      auto members = train_deep_ensemble(cfg.model, train, tc, tm.n);
      for (auto& m : members) tm.members.push_back(std::move(m.params));
      tm.log = std::move(members.front().log);
      break;
    }
    case MethodKind::dca:
    case MethodKind::dcwa: {
      tc.loss = method.loss;
      ParameterBank bank = init_bank(cfg.model, method.granularity, tm.n, seed);
      tm.log = train_dca(bank, train, tc);
      if (method.kind == MethodKind::dca) {
        tm.members = inference_members(bank, cfg.eval_proposals, seed);
      } else {
        auto avg = average_weights(bank);
        tm.members.push_back(std::move(avg.params));
        tm.coarse_grain_warning = avg.coarse_grain_warning;
      }
      tm.bank = std::move(bank);
      break;
    }
  }
  return tm;
}

inline std::vector<ProbBatch> member_predictions(const TrainedModel& m, const Dataset& data) {
  std::vector<ProbBatch> out;
  for (const auto& p : m.members) out.push_back(predict(m.layout, p, data));
  return out;
}

inline ProbBatch predict(const TrainedModel& m, const Dataset& data, Aggregation agg = Aggregation::probability) {
  if (agg == Aggregation::logit) {
    std::vector<Tensor> logits;
    for (const auto& p : m.members) logits.push_back(predict_logits(m.layout, p, data));
    return aggregate_logits(logits, data.labels);
  }
  return aggregate_predictions(member_predictions(m, data));
}

// Banks are stored as-is; standard models and ensembles as one modelwise
// component whose instances are the members.
inline Checkpoint model_checkpoint(const TrainedModel& m) {
  if (m.bank) return to_checkpoint(*m.bank);
  Checkpoint ck{Granularity::modelwise, static_cast<std::uint16_t>(m.members.size()), {m.members}};
  return ck;
}

inline TrainedModel model_from_checkpoint(const Method& method, const Checkpoint& ck, const ExperimentConfig& cfg,
                                          std::uint64_t seed) {
  TrainedModel tm{method, seed, ck.n, build_layout(cfg.model), {}, std::nullopt, false, {}};
  ParameterBank bank = to_bank(tm.layout, ck);
  if (!method.uses_bank()) {
    if (ck.granularity != Granularity::modelwise)
      throw DataError(method.label() + " expects a modelwise checkpoint, got " + std::string(to_string(ck.granularity)));
    if (method.kind == MethodKind::standard && ck.n != 1)
      throw DataError("standard expects a single-model checkpoint, got n = " + std::to_string(ck.n));
    for (const auto& p : enumerate_modelwise(bank)) tm.members.push_back(assemble(bank, p));
    return tm;
  }
  if (ck.granularity != method.granularity)
    throw DataError("checkpoint is " + std::string(to_string(ck.granularity)) + ", method " + method.label() +
                    " expects " + std::string(to_string(method.granularity)));
  if (method.kind == MethodKind::dca) {
    tm.members = inference_members(bank, cfg.eval_proposals, seed);
  } else {
    auto avg = average_weights(bank);
    tm.members.push_back(std::move(avg.params));
    tm.coarse_grain_warning = avg.coarse_grain_warning;
  }
  tm.bank = std::move(bank);
  return tm;
}

// ---------------------------------------------------------------------------
// Tables

struct ResultRow {
  Method method;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  std::string kind;  // corruption kind or empty
  int severity = 0;
  std::optional<MetricsReport> report;
  std::string error;  // set when the cell failed
  bool coarse_grain_warning = false;
  std::optional<ErrorKind> error_kind;
};

struct Stat {
  double mean = 0.0;
  double std = 0.0;
  std::size_t count = 0;
  bool single_seed = false;
};

inline Stat summarize(const std::vector<double>& v) {
  Stat s;
  s.count = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= static_cast<double>(v.size());
  if (v.size() == 1) {
    s.single_seed = true;
    return s;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  return s;
}

inline std::vector<std::pair<std::string, double>> metric_values(const MetricsReport& r) {
  std::vector<std::pair<std::string, double>> out{
      {"accuracy", r.accuracy}, {"nll", r.nll}, {"ece", r.ece}, {"brier", r.brier}};
  if (r.ood) {
    out.emplace_back("fpr_at_95_tpr", r.ood->fpr_at_95_tpr);
    out.emplace_back("detection_error", r.ood->detection_error);
    out.emplace_back("auroc", r.ood->auroc);
    out.emplace_back("aupr_in", r.ood->aupr_in);
    out.emplace_back("aupr_out", r.ood->aupr_out);
  }
  return out;
}

inline std::string loss_name(const Method& m) {
  if (!m.uses_bank()) return "nll";
  return m.loss == LossKind::cel ? "cel" : "nll";
}

// Long form: method,granularity,loss,n,seed,kind,severity,metric,value.
inline std::string to_long_csv(const std::vector<ResultRow>& rows) {
  std::string s = "method,granularity,loss,n,seed,kind,severity,metric,value\n";
  for (const auto& r : rows) {
    const std::string prefix = r.method.name() + "," +
                               (r.method.uses_bank() ? std::string(to_string(r.method.granularity)) : "") + "," +
                               loss_name(r.method) + "," + std::to_string(r.n) + "," + std::to_string(r.seed) + "," +
                               r.kind + "," + std::to_string(r.severity) + ",";
    if (!r.report) {
      s += prefix + "error,NaN\n";
      continue;
    }
    for (const auto& [name, value] : metric_values(*r.report)) s += prefix + name + "," + format_double(value) + "\n";
  }
  return s;
}

// Mean/std per (method, n, kind, severity) cell, in first-appearance order.
inline nlohmann::json summary_json(const std::vector<ResultRow>& rows) {
  struct Cell {
    const ResultRow* first;
    std::map<std::string, std::vector<double>> values;
    std::vector<std::string> order;
    std::size_t failures = 0;
  };
  std::vector<std::string> keys;
  std::map<std::string, Cell> cells;
  for (const auto& r : rows) {
    const std::string key = r.method.label() + "|" + std::to_string(r.n) + "|" + r.kind + "|" + std::to_string(r.severity);
    auto [it, inserted] = cells.try_emplace(key, Cell{&r, {}, {}, 0});
    if (inserted) keys.push_back(key);
    if (!r.report) {
      ++it->second.failures;
      continue;
    }
    for (const auto& [name, value] : metric_values(*r.report)) {
      if (!it->second.values.count(name)) it->second.order.push_back(name);
      it->second.values[name].push_back(value);
    }
  }
  nlohmann::json out = nlohmann::json::array();
  for (const auto& key : keys) {
    const Cell& c = cells.at(key);
    nlohmann::json j{{"method", c.first->method.label()}, {"n", c.first->n}, {"failures", c.failures},
                     {"coarse_grain_warning", c.first->coarse_grain_warning}};
    if (!c.first->kind.empty()) {
      j["kind"] = c.first->kind;
      j["severity"] = c.first->severity;
    }
    for (const auto& name : c.order) {
      const Stat st = summarize(c.values.at(name));
      j["metrics"][name] = {{"mean", st.mean}, {"std", st.std}, {"count", st.count}, {"single_seed", st.single_seed}};
    }
    out.push_back(std::move(j));
  }
  return out;
}

// Runs fn(0..count-1) on up to `jobs` threads; exceptions escaping fn are rethrown.
inline void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, count); ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < count;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---------------------------------------------------------------------------
// Experiments

struct IndomainResult {
  std::vector<ResultRow> rows;          // method-major, then seed
  std::vector<std::optional<TrainedModel>> models;  // aligned with rows
};

inline IndomainResult run_indomain(const std::vector<Method>& methods, const ExperimentData& data,
                                   const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds) {
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  IndomainResult res;
  const std::size_t cells = methods.size() * seeds.size();
  res.rows.resize(cells);
  res.models.resize(cells);
  parallel_for(cells, cfg.jobs, [&](std::size_t k) {
    const Method& m = methods[k / seeds.size()];
    const std::uint64_t seed = seeds[k % seeds.size()];
    ResultRow& row = res.rows[k];
    row.method = m;
    row.n = method_instances(m, cfg);
    row.seed = seed;
    try {
      TrainedModel tm = train_method(m, cfg, data.train, seed);
      row.report = evaluate(predict(tm, data.test, cfg.aggregation), cfg.ece_bins);
      row.coarse_grain_warning = tm.coarse_grain_warning;
      res.models[k] = std::move(tm);
    } catch (const Error& e) {
      row.error = e.what();
      row.error_kind = e.kind();
    }
  });
  return res;
}

inline std::vector<ResultRow> run_shift(const std::vector<TrainedModel>& models, const Dataset& test,
                                        const std::vector<CorruptionKind>& kinds, const std::vector<int>& severities,
                                        const ExperimentConfig& cfg, std::uint64_t corruption_seed) {
  if (kinds.empty()) throw ConfigError("shift needs at least one corruption kind");
  if (severities.empty()) throw ConfigError("shift needs a severity list");
  for (int s : severities)
    if (s < 0 || s > 5) throw ConfigError("severity " + std::to_string(s) + " outside [0, 5]");
  std::vector<ResultRow> rows;
  for (CorruptionKind kind : kinds)
    for (int sev : severities) {
      const Dataset shifted = corrupt(test, {kind, sev}, corruption_seed);
      for (const auto& m : models) {
        ResultRow row{m.method, m.n, m.seed, std::string(to_string(kind)), sev, std::nullopt, {}, m.coarse_grain_warning, {}};
        try {
          row.report = evaluate(predict(m, shifted, cfg.aggregation), cfg.ece_bins);
        } catch (const Error& e) {
          row.error = e.what();
          row.error_kind = e.kind();
        }
        rows.push_back(std::move(row));
      }
    }
  return rows;
}

struct OodRow {
  Method method;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  OodReport report;
  std::vector<RocPoint> roc;
};

inline OodScoreSet ood_score_set(const TrainedModel& m, const Dataset& in_test, const Dataset& out_test,
                                 const ExperimentConfig& cfg) {
  return {ood_scores(predict(m, in_test, cfg.aggregation), cfg.ood_score),
          ood_scores(predict(m, out_test, cfg.aggregation), cfg.ood_score)};
}

inline std::vector<OodRow> run_ood(const std::vector<TrainedModel>& models, const Dataset& in_test,
                                   const Dataset& out_test, const ExperimentConfig& cfg) {
  std::vector<OodRow> rows;
  for (const auto& m : models) {
    const OodScoreSet scores = ood_score_set(m, in_test, out_test, cfg);
    rows.push_back({m.method, m.n, m.seed, ood_metrics(scores), roc_curve(scores)});
  }
  return rows;
}

inline std::string ood_csv(const std::vector<OodRow>& rows) {
  std::vector<ResultRow> long_rows;
  for (const auto& r : rows) {
    MetricsReport rep;
    rep.ood = r.report;
    long_rows.push_back({r.method, r.n, r.seed, "ood", 0, rep, {}, false, {}});
  }
  // Keep only the OOD metrics.
  std::string s = "method,granularity,loss,n,seed,metric,value\n";
  for (const auto& r : long_rows)
    for (const auto& [name, value] : metric_values(*r.report)) {
      if (name == "accuracy" || name == "nll" || name == "ece" || name == "brier") continue;
      s += r.method.name() + "," + (r.method.uses_bank() ? std::string(to_string(r.method.granularity)) : "") + "," +
           loss_name(r.method) + "," + std::to_string(r.n) + "," + std::to_string(r.seed) + "," + name + "," +
           format_double(value) + "\n";
    }
  return s;
}

inline std::string roc_csv(const std::vector<OodRow>& rows) {
  std::string s = "method,seed,fpr,tpr\n";
  for (const auto& r : rows)
    for (const auto& p : r.roc)
      s += r.method.label() + "," + std::to_string(r.seed) + "," + format_double(p.fpr) + "," + format_double(p.tpr) + "\n";
  return s;
}

// Trapezoid area under a ROC polyline.
inline double roc_area(const std::vector<RocPoint>& roc) {
  double a = 0.0;
  for (std::size_t k = 1; k < roc.size(); ++k) a += (roc[k].fpr - roc[k - 1].fpr) * 0.5 * (roc[k].tpr + roc[k - 1].tpr);
  return a;
}

enum class AblationAxis { granularity, loss, instance_count };

inline AblationAxis parse_axis(std::string_view s) {
  if (s == "granularity") return AblationAxis::granularity;
  if (s == "loss") return AblationAxis::loss;
  if (s == "instance_count") return AblationAxis::instance_count;
  throw ConfigError("unknown ablation axis '" + std::string(s) + "'");
}

// Method grid swept along one axis, others held at defaults.
inline std::vector<Method> ablation_methods(AblationAxis axis, const std::vector<std::size_t>& instance_counts = {2, 3, 4, 5}) {
  std::vector<Method> out;
  switch (axis) {
    case AblationAxis::granularity:
      for (Granularity g : kAllGranularities)
        for (MethodKind k : {MethodKind::dca, MethodKind::dcwa}) out.push_back({k, g, LossKind::cel, 0});
      break;
    case AblationAxis::loss:
      for (LossKind l : {LossKind::nll, LossKind::cel}) {
        out.push_back({MethodKind::dcwa, Granularity::layerwise, l, 0});
        out.push_back({MethodKind::dca, Granularity::trunkwise, l, 0});
        out.push_back({MethodKind::dca, Granularity::modelwise, l, 0});
      }
      break;
    case AblationAxis::instance_count:
      for (std::size_t n : instance_counts)
        for (MethodKind k : {MethodKind::dca, MethodKind::dcwa}) out.push_back({k, Granularity::layerwise, LossKind::cel, n});
      break;
  }
  return out;
}

inline std::vector<ResultRow> run_ablations(AblationAxis axis, const ExperimentData& data, const ExperimentConfig& cfg,
                                            const std::vector<std::uint64_t>& seeds,
                                            const std::vector<std::size_t>& instance_counts = {2, 3, 4, 5}) {
  return run_indomain(ablation_methods(axis, instance_counts), data, cfg, seeds).rows;
}

struct IndividualReport {
  std::vector<MetricsReport> members;
  DiversityReport diversity;
};

// Each member of a modelwise bank evaluated alone, plus their diversity.
inline IndividualReport individual_analysis(const ParameterBank& bank, const Dataset& test, std::size_t ece_bins = 15) {
  if (bank.granularity() != Granularity::modelwise)
    throw ConfigError("individual analysis needs a modelwise bank, got " + std::string(to_string(bank.granularity())));
  IndividualReport out;
  std::vector<ProbBatch> preds;
  for (const auto& p : enumerate_modelwise(bank)) {
    preds.push_back(predict(bank.layout(), assemble(bank, p), test));
    out.members.push_back(evaluate(preds.back(), ece_bins));
  }
  out.diversity = diversity(preds);
  return out;
}

struct IndividualComparison {
  std::uint64_t seed = 0;
  IndividualReport nll;
  IndividualReport cel;
};

inline std::vector<IndividualComparison> run_individual_analysis(const ExperimentData& data, const ExperimentConfig& cfg,
                                                                 const std::vector<std::uint64_t>& seeds) {
  std::vector<IndividualComparison> out(seeds.size());
  parallel_for(seeds.size(), cfg.jobs, [&](std::size_t k) {
    out[k].seed = seeds[k];
    for (LossKind loss : {LossKind::nll, LossKind::cel}) {
      const TrainedModel tm = train_method({MethodKind::dca, Granularity::modelwise, loss, 0}, cfg, data.train, seeds[k]);
      (loss == LossKind::nll ? out[k].nll : out[k].cel) = individual_analysis(*tm.bank, data.test, cfg.ece_bins);
    }
  });
  return out;
}

inline std::string individual_csv(const std::vector<IndividualComparison>& rows) {
  std::string s = "loss,seed,member,metric,value\n";
  for (const auto& r : rows)
    for (const auto* side : {&r.nll, &r.cel}) {
      const std::string loss = side == &r.nll ? "nll" : "cel";
      for (std::size_t m = 0; m < side->members.size(); ++m)
        for (const auto& [name, value] : metric_values(side->members[m]))
          s += loss + "," + std::to_string(r.seed) + "," + std::to_string(m) + "," + name + "," + format_double(value) + "\n";
      const nlohmann::json div = to_json(side->diversity);
      for (const auto& [name, value] : div.items())
        s += loss + "," + std::to_string(r.seed) + ",all," + name + "," + format_double(value.get<double>()) + "\n";
    }
  return s;
}

}  // namespace dca
