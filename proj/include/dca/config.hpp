#pragma once

// Flat `key = value` run configuration: parsing, overrides, and resolution
// into the typed experiment structs.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dca/data.hpp"
#include "dca/error.hpp"
#include "dca/harness.hpp"

namespace dca {

// Shortest text that parses back to the same double.
inline std::string shortest_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v, auto&& fmt) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + fmt(v[k]);
  return s;
}

}  // namespace detail

// Every key the CLI understands, with its default. Order is the order keys
// are written back into manifests.
inline const std::vector<std::pair<std::string, std::string>>& config_defaults() {
  static const std::vector<std::pair<std::string, std::string>> table = [] {
    const ExperimentConfig e;
    const TrainConfig& t = e.train;
    std::vector<std::pair<std::string, std::string>> d{
        {"run.name", "run"},
        {"run.out_dir", "out"},
        {"run.seed", "0"},
        {"run.seeds", "0,1,2,3,4"},
        {"run.jobs", std::to_string(e.jobs)},
        {"model.hidden_width", std::to_string(e.model.hidden_width)},
        {"model.trunks", detail::join(e.model.trunks, [](std::size_t b) { return std::to_string(b); })},
        {"data.kind", std::string(to_string(e.data_kind))},
        {"data.classes", std::to_string(e.data.classes)},
        {"data.train_per_class", std::to_string(e.data.train_per_class)},
        {"data.test_per_class", std::to_string(e.data.test_per_class)},
        {"data.noise", shortest_double(e.data.noise)},
        {"data.radius", shortest_double(e.data.radius)},
        {"data.inner_radius", shortest_double(e.data.inner_radius)},
        {"data.outer_radius", shortest_double(e.data.outer_radius)},
        {"data.seed", std::to_string(e.data_seed)},
        {"data.train_images", ""},
        {"data.train_labels", ""},
        {"data.test_images", ""},
        {"data.test_labels", ""},
        {"ood.test_per_class", std::to_string(e.ood.test_per_class)},
        {"ood.inner_radius", shortest_double(e.ood.inner_radius)},
        {"ood.outer_radius", shortest_double(e.ood.outer_radius)},
        {"ood.images", ""},
        {"ood.labels", ""},
        {"ood.score", "max_prob"},
        {"train.base_epochs", std::to_string(t.base_epochs)},
        {"train.lr", shortest_double(t.lr)},
        {"train.momentum", shortest_double(t.momentum)},
        {"train.weight_decay", shortest_double(t.weight_decay)},
        {"train.clip_norm", shortest_double(t.clip_norm)},
        {"train.batch_size", std::to_string(t.batch_size)},
        {"train.kl_weight", shortest_double(t.kl_weight)},
        {"train.inner_passes", std::to_string(t.inner_passes)},
        {"train.schedule", "step_decay"},
        {"train.milestones", detail::join(t.milestones, shortest_double)},
        {"train.decay", shortest_double(t.decay)},
        {"train.reduction", "mean"},
        {"method.kind", "dca"},
        {"method.granularity", "modelwise"},
        {"method.loss", "cel"},
        {"method.n", std::to_string(e.n)},
        {"experiment.methods", "standard,deep_ensemble,dca:modelwise:cel,dcwa:layerwise:cel"},
        {"eval.checkpoint", ""},
        {"eval.proposals", std::to_string(e.eval_proposals)},
        {"eval.ece_bins", std::to_string(e.ece_bins)},
        {"eval.aggregation", "probability"},
        {"shift.kinds", "gaussian_noise,input_blur,pixel_dropout"},
        {"shift.severities", "0,1,2,3,4,5"},
        {"shift.seed", "7"},
        {"ablate.axis", "granularity"},
        {"ablate.instance_counts", "2,3,4,5"},
    };
    return d;
  }();
  return table;
}

// Raw key/value settings; remembers which keys were set explicitly.
class ConfigValues {
 public:
  ConfigValues() {
    for (const auto& [k, v] : config_defaults()) values_[k] = v;
  }

  void set(const std::string& key, const std::string& value, const std::string& where = "") {
    auto it = values_.find(key);
    if (it == values_.end())
      throw ConfigError("unknown config key '" + key + "'" + (where.empty() ? "" : " (" + where + ")"));
    it->second = value;
    explicit_.insert(key);
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  bool is_explicit(const std::string& key) const { return explicit_.count(key) > 0; }

  // All keys in table order.
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : config_defaults()) j[k] = values_.at(k);
    return j;
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

// `key = value` lines; `#` starts a comment; blank lines ignored.
inline void parse_config_text(ConfigValues& cfg, std::string_view text, const std::string& source = "config") {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(lineno);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + t + "'");
    const std::string key = detail::trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    cfg.set(key, detail::trim(std::string_view(t).substr(eq + 1)), where);
  }
}

// A manifest.json from an earlier run carries its resolved config.
inline void apply_manifest_json(ConfigValues& cfg, const nlohmann::json& manifest, const std::string& source) {
  if (!manifest.contains("config") || !manifest["config"].is_object())
    throw ConfigError(source + ": manifest has no config object");
  for (const auto& [k, v] : manifest["config"].items()) {
    if (!v.is_string()) throw ConfigError(source + ": config value for '" + k + "' must be a string");
    cfg.set(k, v.get<std::string>(), source);
  }
}

inline void load_config_file(ConfigValues& cfg, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
    apply_manifest_json(cfg, j, path.string());
    return;
  }
  parse_config_text(cfg, text, path.string());
}

inline void apply_override(ConfigValues& cfg, std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(text) + "' is not key=value");
  cfg.set(detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)), "command line");
}

// ---------------------------------------------------------------------------
// Typed resolution

namespace detail {

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  return static_cast<std::size_t>(to_u64(key, v));
}

inline double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

}  // namespace detail

struct IdxPaths {
  std::string train_images, train_labels, test_images, test_labels, ood_images, ood_labels;
};

struct RunSettings {
  std::string name;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  ExperimentConfig exp;
  Method method;
  std::vector<Method> methods;
  bool use_idx = false;
  IdxPaths idx;
  std::string checkpoint;
  std::vector<CorruptionKind> shift_kinds;
  std::vector<int> shift_severities;
  std::uint64_t shift_seed = 7;
  AblationAxis ablate_axis = AblationAxis::granularity;
  std::vector<std::size_t> ablate_counts;
};

// `env_seed` is the DCA_SEED value, used only when run.seed was never set.
inline RunSettings resolve(ConfigValues& cfg, std::optional<std::string> env_seed = std::nullopt) {
  using detail::to_double;
  using detail::to_size;
  using detail::to_u64;
  if (env_seed && !cfg.is_explicit("run.seed")) cfg.set("run.seed", *env_seed, "DCA_SEED");
  auto g = [&](const char* k) -> const std::string& { return cfg.get(k); };
  auto sz = [&](const char* k) { return to_size(k, g(k)); };
  auto dbl = [&](const char* k) { return to_double(k, g(k)); };

  RunSettings r;
  r.name = g("run.name");
  if (r.name.empty() || r.name.find('/') != std::string::npos || r.name == "." || r.name == "..")
    throw ConfigError("run.name must be a plain directory name, got '" + r.name + "'");
  r.out_dir = g("run.out_dir");
  r.seed = to_u64("run.seed", g("run.seed"));
  for (const auto& s : detail::split_list(g("run.seeds"))) r.seeds.push_back(to_u64("run.seeds", s));
  if (r.seeds.empty()) throw ConfigError("run.seeds must list at least one seed");

  ExperimentConfig& e = r.exp;
  e.jobs = std::max<std::size_t>(1, sz("run.jobs"));
  e.model.hidden_width = sz("model.hidden_width");
  e.model.trunks.clear();
  for (const auto& b : detail::split_list(g("model.trunks"))) e.model.trunks.push_back(to_size("model.trunks", b));

  const std::string kind = g("data.kind");
  r.use_idx = kind == "idx";
  if (!r.use_idx) e.data_kind = parse_synthetic_kind(kind);
  e.data.classes = sz("data.classes");
  e.data.train_per_class = sz("data.train_per_class");
  e.data.test_per_class = sz("data.test_per_class");
  e.data.noise = dbl("data.noise");
  e.data.radius = dbl("data.radius");
  e.data.inner_radius = dbl("data.inner_radius");
  e.data.outer_radius = dbl("data.outer_radius");
  e.data_seed = to_u64("data.seed", g("data.seed"));
  r.idx = {g("data.train_images"), g("data.train_labels"), g("data.test_images"),
           g("data.test_labels"),  g("ood.images"),        g("ood.labels")};
  if (r.use_idx && (r.idx.train_images.empty() || r.idx.train_labels.empty() || r.idx.test_images.empty() ||
                    r.idx.test_labels.empty()))
    throw ConfigError("data.kind = idx needs data.train_images, data.train_labels, data.test_images, data.test_labels");

  e.ood.test_per_class = sz("ood.test_per_class");
  e.ood.inner_radius = dbl("ood.inner_radius");
  e.ood.outer_radius = dbl("ood.outer_radius");
  const std::string score = g("ood.score");
  if (score == "max_prob") e.ood_score = OodScore::max_prob;
  else if (score == "neg_entropy") e.ood_score = OodScore::neg_entropy;
  else throw ConfigError("ood.score must be max_prob or neg_entropy, got '" + score + "'");

  TrainConfig& t = e.train;
  t.base_epochs = sz("train.base_epochs");
  t.lr = dbl("train.lr");
  t.momentum = dbl("train.momentum");
  t.weight_decay = dbl("train.weight_decay");
  t.clip_norm = dbl("train.clip_norm");
  t.batch_size = sz("train.batch_size");
  t.kl_weight = dbl("train.kl_weight");
  t.inner_passes = sz("train.inner_passes");
  const std::string sched = g("train.schedule");
  if (sched == "constant") t.schedule = LrSchedule::constant;
  else if (sched == "step_decay") t.schedule = LrSchedule::step_decay;
  else throw ConfigError("train.schedule must be constant or step_decay, got '" + sched + "'");
  t.milestones.clear();
  for (const auto& m : detail::split_list(g("train.milestones"))) t.milestones.push_back(to_double("train.milestones", m));
  t.decay = dbl("train.decay");
  const std::string red = g("train.reduction");
  if (red == "mean") t.reduction = GradientReduction::mean;
  else if (red == "sum") t.reduction = GradientReduction::sum;
  else throw ConfigError("train.reduction must be mean or sum, got '" + red + "'");
  t.validate();

  const std::string mk = g("method.kind");
  if (mk == "standard" || mk == "deep_ensemble") {
    r.method = parse_method(mk);
  } else {
    r.method = parse_method(mk + ":" + g("method.granularity") + ":" + g("method.loss"));
  }
  e.n = sz("method.n");
  if (e.n == 0) throw ConfigError("method.n must be positive");
  if (r.method.uses_bank() && e.n < 2)
    throw ConfigError("method.n = " + std::to_string(e.n) + " but " + r.method.label() +
                      " needs n >= 2 instances per component");
  for (const auto& m : detail::split_list(g("experiment.methods"))) r.methods.push_back(parse_method(m));
  if (r.methods.empty()) throw ConfigError("experiment.methods must list at least one method");

  r.checkpoint = g("eval.checkpoint");
  e.eval_proposals = sz("eval.proposals");
  if (e.eval_proposals == 0) throw ConfigError("eval.proposals must be positive");
  e.ece_bins = sz("eval.ece_bins");
  if (e.ece_bins == 0) throw ConfigError("eval.ece_bins must be positive");
  const std::string agg = g("eval.aggregation");
  if (agg == "probability") e.aggregation = Aggregation::probability;
  else if (agg == "logit") e.aggregation = Aggregation::logit;
  else throw ConfigError("eval.aggregation must be probability or logit, got '" + agg + "'");

  for (const auto& k : detail::split_list(g("shift.kinds"))) r.shift_kinds.push_back(parse_corruption(k));
  for (const auto& s : detail::split_list(g("shift.severities")))
    r.shift_severities.push_back(static_cast<int>(to_size("shift.severities", s)));
  r.shift_seed = to_u64("shift.seed", g("shift.seed"));
  r.ablate_axis = parse_axis(g("ablate.axis"));
  for (const auto& c : detail::split_list(g("ablate.instance_counts")))
    r.ablate_counts.push_back(to_size("ablate.instance_counts", c));
  e.model.input_dim = 2;
  e.model.class_count = e.data.classes;
  return r;
}

// Train/test/OOD splits for a run. Synthetic data goes through the harness;
// IDX files are standardized with the training split's statistics.
inline ExperimentData load_run_data(RunSettings& r) {
  if (!r.use_idx) {
    r.exp.model.input_dim = 2;
    r.exp.model.class_count = r.exp.data.classes;
    r.exp.model.validate();
    return make_experiment_data(r.exp);
  }
  Dataset train = load_idx(r.idx.train_images, r.idx.train_labels, Split::train);
  Dataset test = load_idx(r.idx.test_images, r.idx.test_labels, Split::test);
  if (train.features() != test.features())
    throw DataError("train images have " + std::to_string(train.features()) + " pixels, test images have " +
                    std::to_string(test.features()));
  const std::size_t classes = std::max(train.class_count, test.class_count);
  train.class_count = test.class_count = classes;
  const Standardizer st = Standardizer::fit(train);
  ExperimentData out{st.apply(std::move(train)), st.apply(std::move(test)), {}};
  if (!r.idx.ood_images.empty()) {
    if (r.idx.ood_labels.empty()) throw ConfigError("ood.images needs ood.labels");
    Dataset ood = load_idx(r.idx.ood_images, r.idx.ood_labels, Split::test);
    if (ood.features() != out.train.features()) throw DataError("OOD images differ in size from in-domain images");
    ood.class_count = classes;
    for (int& y : ood.labels) y = std::min<int>(y, static_cast<int>(classes) - 1);
    out.ood = st.apply(std::move(ood));
  }
  r.exp.data.classes = classes;
  r.exp.model.input_dim = out.train.features();
  r.exp.model.class_count = classes;
  r.exp.model.validate();
  return out;
}

}  // namespace dca
