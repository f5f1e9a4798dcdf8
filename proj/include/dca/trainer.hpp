#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "dca/bank.hpp"
#include "dca/data.hpp"
#include "dca/metrics.hpp"
#include "dca/model.hpp"
#include "dca/random.hpp"

namespace dca {

enum class LrSchedule { constant, step_decay };
enum class GradientReduction { mean, sum };

struct TrainConfig {
  std::size_t base_epochs = 40;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 2e-3;
  double clip_norm = 5.0;  // per-pass gradient norm cap; 0 disables
  std::size_t batch_size = 10;
  LossKind loss = LossKind::nll;  // nll or cel
  double kl_weight = 1.0;
  std::size_t inner_passes = 0;  // gradient passes per minibatch; 0 = instance count
  LrSchedule schedule = LrSchedule::step_decay;
  std::vector<double> milestones{0.5, 0.75};  // fractions of the total epoch count
  double decay = 0.1;
  GradientReduction reduction = GradientReduction::mean;
  std::uint64_t seed = 0;

  void validate() const {
    if (base_epochs == 0) throw ConfigError("train.base_epochs must be positive");
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a finite non-negative number");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
    if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be non-negative");
    if (loss == LossKind::none) throw ConfigError("train.loss must be nll or cel");
    for (double m : milestones)
      if (!(m > 0.0 && m < 1.0)) throw ConfigError("train.milestones must be fractions in (0, 1)");
  }

  std::size_t passes(std::size_t n) const { return inner_passes ? inner_passes : n; }

  double lr_at(std::size_t epoch, std::size_t total_epochs) const {
    if (schedule == LrSchedule::constant) return lr;
    double out = lr;
    for (double m : milestones)
      if (epoch >= static_cast<std::size_t>(std::floor(m * static_cast<double>(total_epochs)))) out *= decay;
    return out;
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
  std::size_t forward_passes = 0;
  std::string checkpoint;

  std::string to_csv() const {
    std::string s = "epoch,loss,accuracy,seconds\n";
    for (const auto& e : epochs)
      s += std::to_string(e.epoch) + "," + format_double(e.loss) + "," + format_double(e.accuracy) + "," +
           format_double(e.seconds) + "\n";
    return s;
  }
};

struct StepReport {
  std::vector<Proposal> proposals;  // gradient passes, in order
  std::optional<Proposal> reference_proposal;  // the extra no-gradient pass (CEL)
  double loss = 0.0;                // mean over gradient passes
  std::size_t correct = 0;          // summed over gradient passes
  std::size_t forward_passes = 0;
};

// Joint training of a parameter bank: each minibatch draws fresh proposals,
// scatters each pass's gradient to the selected instances only, then applies
// one SGD-with-momentum update to the touched instances.
class DcaTrainer {
 public:
  DcaTrainer(ParameterBank& bank, TrainConfig cfg)
      : bank_(bank),
        cfg_(std::move(cfg)),
        infer_(build_network(bank.layout())),
        train_(build_network(bank.layout(), cfg_.loss, cfg_.kl_weight)),
        acc_(bank),
        proposal_rng_(make_rng(cfg_.seed, 12)) {
    cfg_.validate();
  }

  std::size_t passes() const { return cfg_.passes(bank_.instance_count()); }

  // One minibatch. `forced`, when given, replaces sampling: for CEL it holds
  // the reference proposal followed by the gradient proposals.
  StepReport step(const Dataset& data, std::span<const std::size_t> rows, double lr,
                  std::span<const Proposal> forced = {}) {
    const bool consistency = cfg_.loss == LossKind::cel;
    const std::size_t s = passes();
    if (!forced.empty() && forced.size() != s + (consistency ? 1 : 0))
      throw ProposalError("forced proposal count does not match passes per step");
    std::size_t next_forced = 0;
    auto next = [&] { return forced.empty() ? sample_proposal(bank_, proposal_rng_) : forced[next_forced++]; };

    const Tensor x = data.batch(rows);
    Tensor labels(Shape{rows.size()});
    std::vector<int> ylab(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      ylab[k] = data.labels[rows[k]];
      labels[k] = ylab[k];
    }

    StepReport rep;
    acc_.reset();
    Tensor reference;
    if (consistency) {
      rep.reference_proposal = next();
      const auto params = assemble(bank_, *rep.reference_proposal);
      reference = softmax(infer_.graph.forward(params, x));
      ++rep.forward_passes;
    }
    for (std::size_t pass = 0; pass < s; ++pass) {
      const Proposal prop = next();
      const auto params = assemble(bank_, prop);
      if (consistency) {
        const Tensor inputs[] = {x, labels, reference};
        rep.loss += train_.graph.forward(params, inputs)[0];
      } else {
        const Tensor inputs[] = {x, labels};
        rep.loss += train_.graph.forward(params, inputs)[0];
      }
      ++rep.forward_passes;
      const auto& grads = clipped(train_.graph.backward());
      scatter_gradients(bank_, prop, grads, acc_);
      const Tensor& log_probs = train_.graph.value(train_.log_probs);
      for (std::size_t k = 0; k < rows.size(); ++k)
        rep.correct += argmax(log_probs.row(k)) == static_cast<std::size_t>(ylab[k]);
      if (consistency) {
        for (std::size_t i = 0; i < reference.size(); ++i) reference[i] = std::exp(log_probs[i]);
      }
      rep.proposals.push_back(prop);
    }
    rep.loss /= static_cast<double>(s);
    apply_update(lr, cfg_.reduction == GradientReduction::mean ? 1.0 / static_cast<double>(s) : 1.0);
    return rep;
  }

  // Runs base_epochs x n epochs over shuffled minibatches.
  TrainLog run(const Dataset& data) {
    data.validate();
    if (data.class_count != bank_.layout().spec.class_count)
      throw DataError("dataset has " + std::to_string(data.class_count) + " classes, model has " +
                      std::to_string(bank_.layout().spec.class_count));
    if (data.features() != bank_.layout().spec.input_dim)
      throw DimensionError("dataset has " + std::to_string(data.features()) + " features, model expects " +
                           std::to_string(bank_.layout().spec.input_dim));
    const std::size_t total = cfg_.base_epochs * bank_.instance_count();
    Rng shuffle_rng = make_rng(cfg_.seed, 11);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    TrainLog log;
    for (std::size_t epoch = 0; epoch < total; ++epoch) {
      const auto start = std::chrono::steady_clock::now();
      shuffle(order.begin(), order.end(), shuffle_rng);
      const double lr = cfg_.lr_at(epoch, total);
      double loss = 0.0;
      std::size_t correct = 0, seen = 0;
      for (std::size_t first = 0; first < order.size(); first += cfg_.batch_size) {
        const std::size_t count = std::min(cfg_.batch_size, order.size() - first);
        const auto rep = step(data, std::span(order).subspan(first, count), lr);
        loss += rep.loss * static_cast<double>(count);
        correct += rep.correct;
        seen += count;
        log.forward_passes += rep.forward_passes;
        ++log.steps;
      }
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      log.epochs.push_back({epoch + 1, loss / static_cast<double>(seen),
                            static_cast<double>(correct) / static_cast<double>(seen * passes()), secs});
    }
    return log;
  }

 private:
  const std::vector<double>& clipped(const std::vector<double>& grads) {
    if (cfg_.clip_norm <= 0.0) return grads;
    double sq = 0.0;
    for (double g : grads) sq += g * g;
    const double norm = std::sqrt(sq);
    if (norm <= cfg_.clip_norm) return grads;
    clip_buffer_.resize(grads.size());
    const double f = cfg_.clip_norm / norm;
    for (std::size_t i = 0; i < grads.size(); ++i) clip_buffer_[i] = grads[i] * f;
    return clip_buffer_;
  }

  // Two phases so a non-finite result leaves the bank untouched.
  void apply_update(double lr, double grad_scale) {
    struct Staged {
      std::size_t c, i;
      std::vector<double> weights, momentum;
    };
    std::vector<Staged> staged;
    for (std::size_t c = 0; c < bank_.component_count(); ++c)
      for (std::size_t i = 0; i < bank_.instance_count(); ++i) {
        if (!acc_.touched(c, i)) continue;
        const auto g = acc_.sum(c, i);
        Staged st{c, i, std::vector<double>(bank_.instance(c, i).begin(), bank_.instance(c, i).end()),
                  std::vector<double>(bank_.momentum(c, i).begin(), bank_.momentum(c, i).end())};
        for (std::size_t k = 0; k < g.size(); ++k) {
          st.momentum[k] = cfg_.momentum * st.momentum[k] + grad_scale * g[k] + cfg_.weight_decay * st.weights[k];
          st.weights[k] -= lr * st.momentum[k];
          if (!std::isfinite(st.weights[k]) || !std::isfinite(st.momentum[k]))
            throw NumericError("non-finite parameter after update (component " + std::to_string(c) + ")");
        }
        staged.push_back(std::move(st));
      }
    for (auto& st : staged) {
      std::copy(st.weights.begin(), st.weights.end(), bank_.instance(st.c, st.i).begin());
      std::copy(st.momentum.begin(), st.momentum.end(), bank_.momentum(st.c, st.i).begin());
    }
  }

  ParameterBank& bank_;
  TrainConfig cfg_;
  Network infer_;
  Network train_;
  GradientAccumulator acc_;
  Rng proposal_rng_;
  std::vector<double> clip_buffer_;
};

inline TrainLog train_dca(ParameterBank& bank, const Dataset& data, const TrainConfig& cfg) {
  DcaTrainer trainer(bank, cfg);
  return trainer.run(data);
}

struct StandardModel {
  std::vector<double> params;
  TrainLog log;
};

// Single parameter set, NLL, base_epochs epochs: a one-instance modelwise bank
// driven by the same loop.
inline StandardModel train_standard(const ModelSpec& spec, const Dataset& data, TrainConfig cfg) {
  cfg.loss = LossKind::nll;
  cfg.inner_passes = 1;
  ModelLayout layout = build_layout(spec);
  ParameterBank bank(layout, Granularity::modelwise, {{init_parameters(layout, cfg.seed)}}, cfg.seed);
  TrainLog log = train_dca(bank, data, cfg);
  return {std::vector<double>(bank.instance(0, 0).begin(), bank.instance(0, 0).end()), std::move(log)};
}

// n independent standard runs with seeds seed+0 .. seed+n-1.
inline std::vector<StandardModel> train_deep_ensemble(const ModelSpec& spec, const Dataset& data,
                                                      const TrainConfig& cfg, std::size_t n, bool parallel = false) {
  if (n == 0) throw ConfigError("deep ensemble needs at least one member");
  std::vector<StandardModel> members(n);
  auto train_member = [&](std::size_t k) {
    TrainConfig c = cfg;
    c.seed = cfg.seed + k;
    members[k] = train_standard(spec, data, c);
  };
  if (!parallel) {
    for (std::size_t k = 0; k < n; ++k) train_member(k);
    return members;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < n; ++k)
    threads.emplace_back([&, k] {
      try {
        train_member(k);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return members;
}

}  // namespace dca
