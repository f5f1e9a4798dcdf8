// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Criteria 8-12 share one trained experiment at default
// settings (5 seeds), which dominates the runtime.

#include <sys/wait.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include <json.hpp>

#include "dca/checkpoint.hpp"
#include "dca/dcwa.hpp"
#include "dca/harness.hpp"
#include "dca/losses.hpp"
#include "helpers.hpp"

using namespace dca;
using namespace testing_util;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto start = Clock::now();
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  int instances = 0;
  for (; instances < 24; ++instances) {
    const ModelSpec spec = random_spec(rng, 500);
    const ModelLayout layout = build_layout(spec);
    const std::size_t batch = 2 + rng() % 3;
    const auto x = random_matrix(rng, batch, spec.input_dim);
    const auto y = random_labels(rng, batch, spec.class_count);
    const auto ref = oracle::random_probs(rng, batch, spec.class_count);
    auto params = random_params(rng, layout.slot_count);
    while (!away_from_kinks(spec, params, x)) params = random_params(rng, layout.slot_count);
    Tensor labels(Shape{batch});
    for (std::size_t k = 0; k < batch; ++k) labels[k] = y[k];
    for (LossKind loss : {LossKind::nll, LossKind::cel}) {
      const double w = 0.75;
      Network net = build_network(layout, loss, w);
      if (loss == LossKind::cel) {
        const Tensor in[] = {to_tensor(x), labels, to_tensor(ref)};
        net.graph.forward(params, in);
      } else {
        const Tensor in[] = {to_tensor(x), labels};
        net.graph.forward(params, in);
      }
      const auto analytic = net.graph.backward(1.0);
      const auto fd = oracle::fd_gradient(
          [&](const std::vector<double>& p) {
            const auto logits = oracle::mlp_forward(shape_of(spec), p, x);
            return static_cast<double>(loss == LossKind::cel ? oracle::loss(logits, y, &ref, w) : oracle::loss(logits, y));
          },
          params);
      for (std::size_t k = 0; k < fd.size(); ++k) worst = std::max(worst, oracle::rel_err(analytic[k], fd[k]));
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 10.0,
          fmt("max rel err %.2e over %d instances x {NLL, CEL}, %.2f s", worst, instances, secs)};
}

Outcome cel_identity() {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng() % 32, c = 2 + rng() % 9;
    const Tensor logits = to_tensor(random_matrix(rng, b, c, 4.0));
    const auto y = random_labels(rng, b, c);
    const Tensor p = softmax(logits);
    Tensor lp = p;
    for (double& v : lp.data()) v = std::log(v);
    const double a = cel(lp, y, ReferenceDistribution(p)).value;
    worst = std::max(worst, std::abs(a - nll(lp, y).value));
  }
  return {worst <= 1e-12, fmt("max |cel - nll| = %.2e over 100 batches", worst)};
}

Outcome combinatorics() {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.class_count = 3;
  spec.hidden_width = 4;
  spec.trunks = {1};
  const ParameterBank bank = init_bank(spec, Granularity::trunkwise, 2, 0);
  const auto count = count_proposals(bank);
  Rng rng = make_rng(31337, 0);
  std::map<std::vector<std::uint32_t>, double> freq;
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) freq[sample_proposal(bank, rng).indices] += 1;
  double chi2 = 0.0;
  const double expected = draws / 8.0;
  for (const auto& [_, f] : freq) chi2 += (f - expected) * (f - expected) / expected;
  chi2 += (8.0 - static_cast<double>(freq.size())) * expected;  // unseen cells
  const double crit = boost::math::quantile(boost::math::chi_squared(7), 0.999);
  return {count_proposals(2, 3).value == 8 && count.value == 8 && bank.component_count() == 3 && chi2 < crit,
          fmt("count = %llu, chi2 = %.2f < %.2f (df 7, p = 0.001), %zu cells seen",
              static_cast<unsigned long long>(count.value), chi2, crit, freq.size())};
}

Outcome selective_update() {
  std::mt19937_64 rng(99);
  int violations = 0, steps = 0, untouched_checked = 0;
  for (; steps < 100; ++steps) {
    ModelSpec spec;
    spec.input_dim = 2;
    spec.class_count = 2 + rng() % 3;
    spec.hidden_width = 3 + rng() % 4;
    spec.trunks.assign(1 + rng() % 2, 1);
    const Granularity g = kAllGranularities[rng() % 5];
    const std::size_t n = 2 + rng() % 4;
    ParameterBank bank = init_bank(spec, g, n, rng());
    TrainConfig cfg;
    cfg.loss = rng() % 2 ? LossKind::cel : LossKind::nll;
    cfg.inner_passes = 1 + rng() % 3;
    cfg.seed = rng();
    DcaTrainer trainer(bank, cfg);
    const Dataset data = make_dataset(random_matrix(rng, 8, 2), random_labels(rng, 8, spec.class_count), spec.class_count);
    const std::vector<std::size_t> rows{0, 1, 2, 3, 4, 5, 6, 7};
    // A few warm-up steps so momentum buffers are non-zero.
    for (int w = 0; w < 2; ++w) trainer.step(data, rows, 0.05);
    ParameterBank before = bank;
    const StepReport rep = trainer.step(data, rows, 0.05);
    for (std::size_t c = 0; c < bank.component_count(); ++c)
      for (std::size_t i = 0; i < n; ++i) {
        bool used = false;
        for (const auto& p : rep.proposals) used = used || p.indices[c] == i;
        if (used) continue;
        ++untouched_checked;
        if (!bit_equal(bank.instance(c, i), before.instance(c, i)) || !bit_equal(bank.momentum(c, i), before.momentum(c, i)))
          ++violations;
      }
  }
  return {violations == 0 && untouched_checked > 0,
          fmt("%d steps, %d untouched instances checked, %d violations", steps, untouched_checked, violations)};
}

Outcome dcwa_exactness() {
  std::mt19937_64 rng(5);
  double worst = 0.0;
  bool identical_ok = true, perm_ok = true;
  for (int trial = 0; trial < 30; ++trial) {
    const ModelSpec spec = random_spec(rng, 2000);
    const Granularity g = kAllGranularities[trial % 5];
    const std::size_t n = 2 + rng() % 6;
    ParameterBank base = init_bank(spec, g, n, rng());
    // Spread values over several magnitudes.
    auto inst = base.instances();
    for (auto& comp : inst)
      for (auto& v : comp)
        for (double& w : v) w *= std::ldexp(1.0, static_cast<int>(rng() % 5) - 2);
    const ParameterBank bank(base.layout(), g, inst);
    const auto avg = average_weights(bank).params;
    for (std::size_t s = 0; s < avg.size(); ++s) {
      std::vector<double> col;
      for (std::size_t i = 0; i < n; ++i) col.push_back(bank.instance(bank.owner(s), i)[bank.local(s)]);
      worst = std::max(worst, std::abs(avg[s] - static_cast<double>(oracle::streaming_mean(col))));
    }
    auto shuffled = inst;
    for (auto& comp : shuffled) std::shuffle(comp.begin(), comp.end(), rng);
    perm_ok = perm_ok && bit_equal(average_weights(ParameterBank(base.layout(), g, shuffled)).params, avg);
    auto same = inst;
    for (auto& comp : same)
      for (auto& v : comp) v = comp[0];
    const ParameterBank twin(base.layout(), g, same);
    identical_ok = identical_ok && bit_equal(average_weights(twin).params,
                                             assemble(twin, Proposal{std::vector<std::uint32_t>(twin.component_count(), 0)}));
  }
  return {worst <= 1e-15 && identical_ok && perm_ok,
          fmt("max |avg - streaming mean| = %.2e, identical banks exact: %s, permutation bit-identical: %s", worst,
              identical_ok ? "yes" : "no", perm_ok ? "yes" : "no")};
}

Outcome metric_oracles() {
  std::mt19937_64 rng(11);
  double worst = 0.0;
  bool mw_exact = true;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 120, c = 2 + rng() % 6, bins = 1 + rng() % 20;
    const auto p = oracle::random_probs(rng, n, c);
    const auto y = random_labels(rng, n, c);
    worst = std::max(worst, std::abs(ece(batch(p, y), bins) - oracle::ece(p, y, bins)));
    worst = std::max(worst, std::abs(brier(batch(p, y)) - oracle::brier(p, y)));
  }
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t ni = 1 + rng() % 80, no = 1 + rng() % 80;
    const bool ties = trial % 2 == 0;
    std::uniform_int_distribution<int> grid(0, ties ? 10 : 1 << 30);
    std::vector<double> in(ni), out(no);
    for (double& v : in) v = (grid(rng) + 1.0) / (1 << 30);
    for (double& v : out) v = grid(rng) / static_cast<double>(1 << 30);
    if (!ties) {
      // Tie-free: redraw on collision.
      std::set<double> seen;
      for (auto* vec : {&in, &out})
        for (double& v : *vec)
          while (!seen.insert(v).second) v = grid(rng) / static_cast<double>(1 << 30);
    }
    const OodReport r = ood_metrics({in, out});
    const oracle::OodValues o = oracle::ood(in, out);
    for (double d : {r.fpr_at_95_tpr - o.fpr95, r.detection_error - o.det_err, r.auroc - o.auroc,
                     r.aupr_in - o.aupr_in, r.aupr_out - o.aupr_out})
      worst = std::max(worst, std::abs(d));
    if (!ties) mw_exact = mw_exact && r.auroc == oracle::mann_whitney_auc(in, out);
  }
  return {worst <= 1e-9 && mw_exact,
          fmt("max deviation %.2e over 50 calibration + 50 OOD instances; Mann-Whitney exact on tie-free: %s", worst,
              mw_exact ? "yes" : "no")};
}

Outcome diversity_oracles() {
  std::mt19937_64 rng(13);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 2 + rng() % 5, n = 1 + rng() % 40, c = 2 + rng() % 6;
    std::vector<oracle::Matrix> models;
    std::vector<ProbBatch> batches;
    for (std::size_t k = 0; k < m; ++k) {
      models.push_back(oracle::random_probs(rng, n, c));
      batches.push_back({to_tensor(models.back()), std::nullopt});
    }
    const DiversityReport r = diversity(batches);
    const oracle::Diversity o = oracle::diversity(models);
    worst = std::max({worst, std::abs(r.pairwise_kl - o.pw), std::abs(r.classwise_variance - o.var),
                      std::abs(r.js_divergence - o.js)});
  }
  bool zeros = true;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor t = to_tensor(oracle::random_probs(rng, 1 + rng() % 30, 2 + rng() % 6));
    const std::vector<ProbBatch> same(2 + rng() % 5, ProbBatch{t, std::nullopt});
    const DiversityReport r = diversity(same);
    zeros = zeros && r.pairwise_kl == 0.0 && r.classwise_variance == 0.0 && r.js_divergence == 0.0;
  }
  return {worst <= 1e-10 && zeros,
          fmt("max deviation %.2e over 50 instances; identical batches all zero: %s", worst, zeros ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// Shared desk-scale experiment

struct Experiment {
  ExperimentConfig cfg;
  ExperimentData data;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<Method> methods;
  IndomainResult indomain;
  double seconds = 0.0;
};

Experiment& experiment() {
  static Experiment e = [] {
    Experiment x;
    x.data = make_experiment_data(x.cfg);
    x.methods = {parse_method("standard"), parse_method("deep_ensemble"), parse_method("dca:modelwise:cel"),
                 parse_method("dcwa:layerwise:cel")};
    const auto start = Clock::now();
    x.indomain = run_indomain(x.methods, x.data, x.cfg, x.seeds);
    x.seconds = seconds_since(start);
    return x;
  }();
  return e;
}

std::vector<double> metric_of(const Experiment& e, std::size_t method, double MetricsReport::*field) {
  std::vector<double> out;
  for (std::size_t s = 0; s < e.seeds.size(); ++s) {
    const auto& row = e.indomain.rows[method * e.seeds.size() + s];
    if (!row.report) throw NumericError(row.method.label() + " seed " + std::to_string(row.seed) + " failed: " + row.error);
    out.push_back((*row.report).*field);
  }
  return out;
}

// a >= b with slack of one pooled standard error, sqrt((s_a^2 + s_b^2) / k).
bool at_least(const Stat& a, const Stat& b) {
  return a.mean >= b.mean - std::sqrt((a.std * a.std + b.std * b.std) / static_cast<double>(a.count));
}

Outcome indomain_ordering() {
  Experiment& e = experiment();
  const Stat acc_std = summarize(metric_of(e, 0, &MetricsReport::accuracy));
  const Stat acc_de = summarize(metric_of(e, 1, &MetricsReport::accuracy));
  const Stat acc_dca = summarize(metric_of(e, 2, &MetricsReport::accuracy));
  const Stat nll_std = summarize(metric_of(e, 0, &MetricsReport::nll));
  const Stat nll_de = summarize(metric_of(e, 1, &MetricsReport::nll));
  const Stat nll_dca = summarize(metric_of(e, 2, &MetricsReport::nll));
  auto neg = [](Stat s) {
    s.mean = -s.mean;
    return s;
  };
  const bool ok = at_least(acc_dca, acc_de) && at_least(acc_de, acc_std) && at_least(neg(nll_dca), neg(nll_de)) &&
                  at_least(neg(nll_de), neg(nll_std)) && e.seconds < 900.0;
  return {ok, fmt("acc dca %.4f >= de %.4f >= std %.4f; nll dca %.4f <= de %.4f <= std %.4f; %.0f s", acc_dca.mean,
                  acc_de.mean, acc_std.mean, nll_dca.mean, nll_de.mean, nll_std.mean, e.seconds)};
}

Outcome dcwa_vs_standard() {
  Experiment& e = experiment();
  const Stat dcwa = summarize(metric_of(e, 3, &MetricsReport::accuracy));
  const Stat std_acc = summarize(metric_of(e, 0, &MetricsReport::accuracy));
  return {at_least(dcwa, std_acc), fmt("layerwise DCWA (CEL) acc %.4f +- %.4f vs standard %.4f +- %.4f", dcwa.mean,
                                       dcwa.std, std_acc.mean, std_acc.std)};
}

Outcome diversity_claim() {
  Experiment& e = experiment();
  DiversityReport nll_mean, cel_mean;
  for (std::size_t s = 0; s < e.seeds.size(); ++s) {
    // CEL banks come from the shared run; the NLL banks are trained here.
    const auto& cel_model = e.indomain.models[2 * e.seeds.size() + s];
    if (!cel_model || !cel_model->bank) throw StateError("modelwise CEL bank missing for seed " + std::to_string(e.seeds[s]));
    const TrainedModel nll_model = train_method(parse_method("dca:modelwise:nll"), e.cfg, e.data.train, e.seeds[s]);
    const DiversityReport a = individual_analysis(*nll_model.bank, e.data.test, e.cfg.ece_bins).diversity;
    const DiversityReport b = individual_analysis(*cel_model->bank, e.data.test, e.cfg.ece_bins).diversity;
    nll_mean.pairwise_kl += a.pairwise_kl / 5;
    nll_mean.classwise_variance += a.classwise_variance / 5;
    nll_mean.js_divergence += a.js_divergence / 5;
    cel_mean.pairwise_kl += b.pairwise_kl / 5;
    cel_mean.classwise_variance += b.classwise_variance / 5;
    cel_mean.js_divergence += b.js_divergence / 5;
  }
  const bool ok = nll_mean.pairwise_kl > cel_mean.pairwise_kl &&
                  nll_mean.classwise_variance > cel_mean.classwise_variance &&
                  nll_mean.js_divergence > cel_mean.js_divergence;
  return {ok, fmt("NLL vs CEL members: D_pw %.3e > %.3e, D_var %.3e > %.3e, D_js %.3e > %.3e", nll_mean.pairwise_kl,
                  cel_mean.pairwise_kl, nll_mean.classwise_variance, cel_mean.classwise_variance,
                  nll_mean.js_divergence, cel_mean.js_divergence)};
}

std::vector<TrainedModel> trained_models(const Experiment& e) {
  std::vector<TrainedModel> out;
  for (const auto& m : e.indomain.models) {
    if (!m) throw StateError("a training cell failed");
    out.push_back(*m);
  }
  return out;
}

Outcome shift_sanity() {
  Experiment& e = experiment();
  const auto models = trained_models(e);
  const std::vector<CorruptionKind> kinds(std::begin(kAllCorruptions), std::end(kAllCorruptions));
  const auto rows = run_shift(models, e.data.test, kinds, {0, 5}, e.cfg, 7);
  // rows: kind-major, then severity, then model (aligned with indomain rows).
  int monotone_fail = 0, mismatch = 0, checked = 0;
  const std::size_t m = models.size();
  for (std::size_t k = 0; k < kinds.size(); ++k)
    for (std::size_t j = 0; j < m; ++j) {
      const ResultRow& s0 = rows[k * 2 * m + j];
      const ResultRow& s5 = rows[k * 2 * m + m + j];
      const ResultRow& in = e.indomain.rows[j];
      if (!s0.report || !s5.report) throw StateError("shift cell failed: " + s0.error + s5.error);
      ++checked;
      if (s5.report->accuracy > s0.report->accuracy) ++monotone_fail;
      const auto& a = *s0.report;
      const auto& b = *in.report;
      if (a.accuracy != b.accuracy || a.nll != b.nll || a.ece != b.ece || a.brier != b.brier) ++mismatch;
    }
  return {monotone_fail == 0 && mismatch == 0,
          fmt("%d (method, seed, kind) cells: %d with acc@5 > acc@0, %d severity-0 rows differing from in-domain",
              checked, monotone_fail, mismatch)};
}

Outcome ood_sanity() {
  Experiment& e = experiment();
  const auto models = trained_models(e);
  const auto rows = run_ood(models, e.data.test, e.data.ood, e.cfg);
  const double n1 = static_cast<double>(e.data.test.size()), n2 = static_cast<double>(e.data.ood.size());
  const double bar = 0.5 + 3.0 * std::sqrt((n1 + n2 + 1.0) / (12.0 * n1 * n2));
  double min_auroc = 1.0, worst_area = 0.0;
  for (const auto& r : rows) {
    min_auroc = std::min(min_auroc, r.report.auroc);
    worst_area = std::max(worst_area, std::abs(roc_area(r.roc) - r.report.auroc));
  }
  return {min_auroc > bar && worst_area <= 1e-6,
          fmt("min AUROC %.4f > %.4f over %zu models; max |ROC area - AUROC| = %.2e", min_auroc, bar, rows.size(),
              worst_area)};
}

// ---------------------------------------------------------------------------

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(DCA_CLI) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every file under checkpoints/ and metrics/, by relative path.
std::map<std::string, std::string> artifacts(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const char* sub : {"checkpoints", "metrics"})
    for (const auto& e : fs::recursive_directory_iterator(root / sub))
      if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

Outcome reproducibility() {
  const fs::path work = fs::temp_directory_path() / "dca_acceptance_repro";
  fs::remove_all(work);
  fs::create_directories(work);
  std::ofstream(work / "run.cfg") << "run.out_dir = " << (work / "out").string()
                                  << "\nrun.seeds = 0,1\nmodel.hidden_width = 8\nmodel.trunks = 1\n"
                                     "data.train_per_class = 30\ndata.test_per_class = 30\nood.test_per_class = 30\n"
                                     "train.base_epochs = 2\nmethod.granularity = layerwise\nmethod.n = 3\n"
                                     "experiment.methods = standard, dca:layerwise:cel, dcwa:layerwise:cel\n";
  int replays = 0, differing = 0;
  for (const char* cmd : {"train", "eval"}) {
    const std::string name = std::string("r_") + cmd;
    const fs::path dir = work / "out" / name;
    if (run_cli(std::string(cmd) + " " + (work / "run.cfg").string() + " run.name=" + name, work / "log.txt") != 0)
      return {false, std::string(cmd) + " failed: " + slurp(work / "log.txt")};
    const fs::path first = work / "out" / (name + ".first");
    fs::rename(dir, first);
    if (run_cli(std::string(cmd) + " " + (first / "manifest.json").string(), work / "log.txt") != 0)
      return {false, std::string(cmd) + " replay failed: " + slurp(work / "log.txt")};
    const auto a = artifacts(first), b = artifacts(dir);
    if (a.empty() || a != b) ++differing;
    const auto ma = nlohmann::json::parse(slurp(first / "manifest.json"));
    const auto mb = nlohmann::json::parse(slurp(dir / "manifest.json"));
    if (ma["artifacts"] != mb["artifacts"] || ma["config"] != mb["config"]) ++differing;
    ++replays;
  }

  // In-process round trip of a trained bank.
  ExperimentConfig cfg;
  cfg.model.hidden_width = 8;
  cfg.model.trunks = {1};
  cfg.data.train_per_class = 20;
  cfg.train.base_epochs = 1;
  const ExperimentData data = make_experiment_data(cfg);
  const TrainedModel tm = train_method(parse_method("dca:neuronwise:cel"), cfg, data.train, 3);
  const Checkpoint ck = model_checkpoint(tm);
  write_checkpoint(work / "bank.dca", ck);
  const auto bytes = read_file_bytes(work / "bank.dca");
  const CheckpointInfo info = inspect_checkpoint(bytes);
  const Checkpoint back = decode_checkpoint(bytes);
  bool bits = back.components.size() == ck.components.size();
  for (std::size_t c = 0; bits && c < ck.components.size(); ++c)
    for (std::size_t i = 0; bits && i < ck.n; ++i) bits = bit_equal(back.components[c][i], ck.components[c][i]);
  fs::remove_all(work);
  return {differing == 0 && bits && info.crc_ok(),
          fmt("%d CLI manifest replays, %d with differing artifacts; round trip bit-exact: %s, CRC ok: %s", replays,
              differing, bits ? "yes" : "no", info.crc_ok() ? "yes" : "no")};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient oracle", gradient_oracle},
      {"CEL identity", cel_identity},
      {"combinatorics", combinatorics},
      {"selective update", selective_update},
      {"DCWA exactness", dcwa_exactness},
      {"metric oracles", metric_oracles},
      {"diversity oracles", diversity_oracles},
      {"in-domain ordering", indomain_ordering},
      {"DCWA vs standard", dcwa_vs_standard},
      {"diversity NLL > CEL", diversity_claim},
      {"shift sanity", shift_sanity},
      {"OOD sanity", ood_sanity},
      {"reproducibility", reproducibility},
  };
  int failed = 0, index = 0;
  for (const auto& [name, fn] : criteria) {
    ++index;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %-22s %s\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failed, index);
  return failed ? 1 : 0;
}
