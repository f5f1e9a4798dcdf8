// dca: command-line driver for training, evaluation and the experiment matrix.
//
//   dca <command> <config> [key=value ...]
//   dca inspect-checkpoint <file>

#include <fcntl.h>
#include <openssl/evp.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dca/checkpoint.hpp"
#include "dca/config.hpp"
#include "dca/dcwa.hpp"
#include "dca/harness.hpp"

namespace fs = std::filesystem;
using namespace dca;

namespace {

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw StateError("SHA-256 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int k = 0; k < len; ++k) {
    out += hex[digest[k] >> 4];
    out += hex[digest[k] & 15];
  }
  return out;
}

std::span<const std::uint8_t> as_bytes(const std::string& s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}

// out/<run>/ with its fixed subdirectories, held under a lock file for the
// lifetime of the command. Artifacts in checkpoints/ and metrics/ are hashed
// into the manifest; logs/ carries wall-clock data and is not.
class RunDir {
 public:
  RunDir(const fs::path& root) : root_(root) {
    fs::create_directories(root_);
    lock_ = root_ / ".lock";
    const int fd = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw StateError("output directory " + root_.string() + " is locked by another run (remove " + lock_.string() +
                       " if stale)");
    ::close(fd);
    for (const char* sub : {"checkpoints", "metrics", "logs"}) fs::create_directories(root_ / sub);
  }
  ~RunDir() {
    std::error_code ec;
    fs::remove(lock_, ec);
  }
  RunDir(const RunDir&) = delete;
  RunDir& operator=(const RunDir&) = delete;

  void write(const std::string& rel, std::span<const std::uint8_t> bytes) {
    write_file_bytes(root_ / rel, bytes);
    if (!rel.starts_with("logs/")) artifacts_[rel] = sha256_hex(bytes);
  }
  void write(const std::string& rel, const std::string& text) { write(rel, as_bytes(text)); }
  void write_checkpoint(const std::string& rel, const Checkpoint& ck) { write(rel, encode_checkpoint(ck)); }

  void write_manifest(const std::string& command, const ConfigValues& cfg, const RunSettings& r,
                      const std::string& status) {
    nlohmann::ordered_json m;
    m["format"] = "dca-manifest-1";
    m["command"] = command;
    m["status"] = status;
    m["seed"] = r.seed;
    m["seeds"] = r.seeds;
    m["config"] = cfg.to_json();
    m["artifacts"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : artifacts_) m["artifacts"][k] = v;
    write_file_bytes(root_ / "manifest.json", as_bytes(m.dump(2) + "\n"));
  }

  const fs::path& root() const { return root_; }

 private:
  fs::path root_;
  fs::path lock_;
  std::map<std::string, std::string> artifacts_;
};

std::string file_tag(const Method& m, std::uint64_t seed) {
  std::string s = m.label();
  for (char& ch : s)
    if (ch == ':') ch = '_';
  return s + "_seed" + std::to_string(seed);
}

std::string json_text(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// Failed cells are reported on stderr; the first failure's kind sets the exit code.
int report_failures(const std::vector<ResultRow>& rows) {
  int code = 0;
  for (const auto& r : rows)
    if (!r.report) {
      std::cerr << "cell failed: " << r.method.label() << " seed " << r.seed
                << (r.kind.empty() ? "" : " " + r.kind + "@" + std::to_string(r.severity)) << ": " << r.error << "\n";
      if (!code) code = r.error_kind ? exit_code(*r.error_kind) : 2;
    }
  return code;
}

void save_models(RunDir& dir, const IndomainResult& res) {
  for (const auto& m : res.models)
    if (m) dir.write_checkpoint("checkpoints/" + file_tag(m->method, m->seed) + ".dca", model_checkpoint(*m));
}

std::vector<TrainedModel> trained(const IndomainResult& res) {
  std::vector<TrainedModel> out;
  for (const auto& m : res.models)
    if (m) out.push_back(*m);
  return out;
}

// ---------------------------------------------------------------------------
// Commands

// Trains one bank under the CLI's control so a numeric abort can still dump
// the last consistent state (updates are all-or-nothing per step).
TrainLog train_bank(RunDir& dir, ParameterBank& bank, const Dataset& train, const TrainConfig& tc,
                    const std::string& last_good) {
  try {
    return train_dca(bank, train, tc);
  } catch (const NumericError&) {
    dir.write_checkpoint("checkpoints/" + last_good, to_checkpoint(bank));
    std::cerr << "numeric failure; last good state written to " << (dir.root() / "checkpoints" / last_good).string()
              << "\n";
    throw;
  }
}

nlohmann::ordered_json log_summary(const TrainLog& log) {
  nlohmann::ordered_json j;
  j["epochs"] = log.epochs.size();
  j["steps"] = log.steps;
  j["forward_passes"] = log.forward_passes;
  if (!log.epochs.empty()) {
    j["initial_loss"] = log.epochs.front().loss;
    j["final_loss"] = log.epochs.back().loss;
    j["final_accuracy"] = log.epochs.back().accuracy;
  }
  return j;
}

int cmd_train(RunDir& dir, RunSettings& r, const ExperimentData& data) {
  const ExperimentConfig& e = r.exp;
  const ModelLayout layout = build_layout(e.model);
  TrainConfig tc = e.train;
  tc.seed = r.seed;
  nlohmann::ordered_json summary;
  summary["method"] = r.method.label();
  summary["seed"] = r.seed;

  Checkpoint ck;
  if (r.method.uses_bank()) {
    tc.loss = r.method.loss;
    ParameterBank bank = init_bank(e.model, r.method.granularity, e.n, r.seed);
    const TrainLog log = train_bank(dir, bank, data.train, tc, "last_good.dca");
    dir.write("logs/train_log.csv", log.to_csv());
    summary["train"] = log_summary(log);
    ck = to_checkpoint(bank);
    if (r.method.kind == MethodKind::dcwa) {
      const auto avg = average_weights(bank);
      dir.write_checkpoint("checkpoints/averaged.dca", single_model_checkpoint(avg.params));
      summary["coarse_grain_warning"] = avg.coarse_grain_warning;
      if (avg.coarse_grain_warning)
        std::cerr << "warning: weight averaging a coarse-grain (" << to_string(bank.granularity()) << ") bank\n";
    }
  } else {
    // Standard training and ensemble members: one-instance modelwise banks,
    // NLL, base_epochs epochs, member k seeded with seed + k.
    const std::size_t members = r.method.kind == MethodKind::standard ? 1 : e.n;
    tc.loss = LossKind::nll;
    tc.inner_passes = 1;
    ck = {Granularity::modelwise, static_cast<std::uint16_t>(members), {{}}};
    std::string csv;
    for (std::size_t k = 0; k < members; ++k) {
      TrainConfig mc = tc;
      mc.seed = r.seed + k;
      ParameterBank bank(layout, Granularity::modelwise, {{init_parameters(layout, mc.seed)}}, mc.seed);
      const TrainLog log = train_bank(dir, bank, data.train, mc, "last_good_member" + std::to_string(k) + ".dca");
      const std::string member_csv = log.to_csv();
      csv += k == 0 ? member_csv : member_csv.substr(member_csv.find('\n') + 1);
      summary["members"].push_back(log_summary(log));
      ck.components[0].emplace_back(bank.instance(0, 0).begin(), bank.instance(0, 0).end());
    }
    dir.write("logs/train_log.csv", csv);
  }
  dir.write_checkpoint("checkpoints/model.dca", ck);

  const TrainedModel tm = model_from_checkpoint(r.method, ck, e, r.seed);
  summary["test"] = to_json(evaluate(predict(tm, data.test, e.aggregation), e.ece_bins));
  dir.write("metrics/train_summary.json", json_text(summary));
  std::cout << "trained " << r.method.label() << " -> " << (dir.root() / "checkpoints/model.dca").string() << "\n";
  std::cout << "test accuracy " << summary["test"]["accuracy"].get<double>() << ", nll "
            << summary["test"]["nll"].get<double>() << "\n";
  return 0;
}

int cmd_eval(RunDir& dir, RunSettings& r, const ExperimentData& data) {
  const ExperimentConfig& e = r.exp;
  if (!r.checkpoint.empty()) {
    const Checkpoint ck = read_checkpoint(r.checkpoint);
    const TrainedModel tm = model_from_checkpoint(r.method, ck, e, r.seed);
    const MetricsReport rep = evaluate(predict(tm, data.test, e.aggregation), e.ece_bins);
    nlohmann::ordered_json j;
    j["method"] = r.method.label();
    j["checkpoint_sha256"] = sha256_hex(encode_checkpoint(ck));
    j["metrics"] = to_json(rep);
    dir.write("metrics/eval.json", json_text(j));
    ResultRow row{r.method, tm.n, r.seed, "", 0, rep, {}, tm.coarse_grain_warning, {}};
    dir.write("metrics/eval.csv", to_long_csv({row}));
    std::cout << "accuracy " << rep.accuracy << ", nll " << rep.nll << ", ece " << rep.ece << ", brier " << rep.brier
              << "\n";
    return 0;
  }
  const IndomainResult res = run_indomain(r.methods, data, e, r.seeds);
  save_models(dir, res);
  dir.write("metrics/indomain.csv", to_long_csv(res.rows));
  dir.write("metrics/indomain_summary.json", json_text(summary_json(res.rows)));
  return report_failures(res.rows);
}

int cmd_shift(RunDir& dir, RunSettings& r, const ExperimentData& data) {
  const IndomainResult res = run_indomain(r.methods, data, r.exp, r.seeds);
  save_models(dir, res);
  const auto rows = run_shift(trained(res), data.test, r.shift_kinds, r.shift_severities, r.exp, r.shift_seed);
  dir.write("metrics/indomain.csv", to_long_csv(res.rows));
  dir.write("metrics/shift.csv", to_long_csv(rows));
  dir.write("metrics/shift_summary.json", json_text(summary_json(rows)));
  const int a = report_failures(res.rows);
  const int b = report_failures(rows);
  return a ? a : b;
}

int cmd_ood(RunDir& dir, RunSettings& r, const ExperimentData& data) {
  if (data.ood.size() == 0) throw ConfigError("ood needs an outlier set (ood.images / ood.labels for IDX data)");
  const IndomainResult res = run_indomain(r.methods, data, r.exp, r.seeds);
  save_models(dir, res);
  const auto rows = run_ood(trained(res), data.test, data.ood, r.exp);
  dir.write("metrics/ood.csv", ood_csv(rows));
  dir.write("metrics/ood_roc.csv", roc_csv(rows));
  std::vector<ResultRow> long_rows;
  for (const auto& o : rows) {
    MetricsReport rep;
    rep.ood = o.report;
    long_rows.push_back({o.method, o.n, o.seed, "ood", 0, rep, {}, false, {}});
  }
  nlohmann::json summary = summary_json(long_rows);
  for (auto& cell : summary)
    for (const char* k : {"accuracy", "nll", "ece", "brier"}) cell["metrics"].erase(k);
  dir.write("metrics/ood_summary.json", json_text(summary));
  return report_failures(res.rows);
}

int cmd_ablate(RunDir& dir, RunSettings& r, const ExperimentData& data) {
  const auto rows = run_ablations(r.ablate_axis, data, r.exp, r.seeds, r.ablate_counts);
  static const char* names[] = {"granularity", "loss", "instance_count"};
  const std::string axis = names[static_cast<int>(r.ablate_axis)];
  dir.write("metrics/ablation_" + axis + ".csv", to_long_csv(rows));
  dir.write("metrics/ablation_" + axis + "_summary.json", json_text(summary_json(rows)));
  return report_failures(rows);
}

int cmd_diversity(RunDir& dir, RunSettings& r, const ExperimentData& data) {
  const auto rows = run_individual_analysis(data, r.exp, r.seeds);
  dir.write("metrics/diversity.csv", individual_csv(rows));
  nlohmann::ordered_json summary;
  for (const char* loss : {"nll", "cel"}) {
    std::map<std::string, std::vector<double>> vals;
    for (const auto& row : rows) {
      const auto& side = std::string(loss) == "nll" ? row.nll : row.cel;
      const nlohmann::json div = to_json(side.diversity);
      for (const auto& [name, v] : div.items()) vals[name].push_back(v.get<double>());
    }
    for (const auto& [name, v] : vals) {
      const Stat st = summarize(v);
      summary[loss][name] = {{"mean", st.mean}, {"std", st.std}, {"count", st.count}};
    }
  }
  dir.write("metrics/diversity_summary.json", json_text(summary));
  return 0;
}

int cmd_inspect(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  const CheckpointInfo info = inspect_checkpoint(bytes);
  std::printf("file:        %s\n", path.c_str());
  std::printf("magic:       DCA1\n");
  std::printf("version:     %u\n", info.version);
  std::printf("granularity: %s\n", std::string(to_string(info.granularity)).c_str());
  std::printf("n:           %u\n", static_cast<unsigned>(info.n));
  std::printf("components:  %zu\n", info.component_slots.size());
  std::uint64_t total = 0;
  for (std::size_t c = 0; c < info.component_slots.size(); ++c) {
    std::printf("  [%zu] %llu slots\n", c, static_cast<unsigned long long>(info.component_slots[c]));
    total += info.component_slots[c];
  }
  std::printf("slots/model: %llu\n", static_cast<unsigned long long>(total));
  std::printf("crc32:       stored %08x, computed %08x, %s\n", info.stored_crc, info.computed_crc,
              info.crc_ok() ? "ok" : "MISMATCH");
  if (!info.crc_ok()) {
    std::fprintf(stderr, "error: checkpoint CRC mismatch in %s\n", path.c_str());
    return 2;
  }
  return 0;
}

using Command = int (*)(RunDir&, RunSettings&, const ExperimentData&);

int run_command(const std::string& name, Command fn, const std::string& config_path,
                const std::vector<std::string>& overrides) {
  ConfigValues cfg;
  load_config_file(cfg, config_path);
  for (const auto& o : overrides) apply_override(cfg, o);
  const char* env = std::getenv("DCA_SEED");
  RunSettings r = resolve(cfg, env ? std::optional<std::string>(env) : std::nullopt);
  const ExperimentData data = load_run_data(r);
  RunDir dir(fs::path(r.out_dir) / r.name);
  try {
    const int code = fn(dir, r, data);
    dir.write_manifest(name, cfg, r, code == 0 ? "ok" : "partial");
    return code;
  } catch (const Error& e) {
    dir.write_manifest(name, cfg, r, std::string("failed: ") + e.what());
    throw;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep combinatorial aggregation: training, evaluation and experiments"};
  app.require_subcommand(1);

  struct Sub {
    const char* name;
    const char* help;
    Command fn;
  };
  const Sub subs[] = {
      {"train", "train one method (method.*) and write its checkpoint", cmd_train},
      {"eval", "evaluate eval.checkpoint, or the in-domain matrix when none is set", cmd_eval},
      {"shift", "accuracy/calibration under corrupted test inputs", cmd_shift},
      {"ood", "out-of-distribution detection metrics and ROC curves", cmd_ood},
      {"ablate", "granularity, loss or instance-count ablation (ablate.axis)", cmd_ablate},
      {"diversity", "member-level metrics and diversity of modelwise banks, NLL vs CEL", cmd_diversity},
  };
  std::string config_path;
  std::vector<std::string> overrides;
  std::string chosen;
  Command chosen_fn = nullptr;
  for (const auto& s : subs) {
    auto* sc = app.add_subcommand(s.name, s.help);
    sc->add_option("config", config_path, "config file (key = value lines) or a manifest.json")->required();
    sc->add_option("overrides", overrides, "key=value settings applied after the config file");
    sc->callback([&, s] {
      chosen = s.name;
      chosen_fn = s.fn;
    });
  }
  std::string ck_path;
  auto* inspect = app.add_subcommand("inspect-checkpoint", "dump a checkpoint header and verify its CRC");
  inspect->add_option("checkpoint", ck_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (inspect->parsed()) return cmd_inspect(ck_path);
    return run_command(chosen, chosen_fn, config_path, overrides);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
