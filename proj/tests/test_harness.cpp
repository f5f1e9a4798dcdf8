#include <gtest/gtest.h>

#include <algorithm>

#include "dca/harness.hpp"
#include "helpers.hpp"

using namespace dca;
using namespace testing_util;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig c;
  c.model.hidden_width = 6;
  c.model.trunks = {1};
  c.data.train_per_class = 10;
  c.data.test_per_class = 10;
  c.ood.test_per_class = 10;
  c.train.base_epochs = 2;
  c.n = 2;
  c.eval_proposals = 4;
  return c;
}

}  // namespace

TEST(Methods, ParseAndLabel) {
  for (const char* s : {"standard", "deep_ensemble", "dca:modelwise:cel", "dcwa:layerwise:nll", "dca:neuronwise:nll"})
    EXPECT_EQ(parse_method(s).label(), s);
  EXPECT_EQ(parse_method("dca:layer:CEL").label(), "dca:layerwise:cel");
  EXPECT_THROW(parse_method("dca:layerwise"), ConfigError);
  EXPECT_THROW(parse_method("standard:cel"), ConfigError);
  EXPECT_THROW(parse_method("bagging"), ConfigError);
  EXPECT_THROW(parse_method("dca:layerwise:mse"), ConfigError);
}

TEST(Summary, MeanAndSampleStd) {
  const Stat s = summarize({1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(s.mean, 2.0);
  EXPECT_DOUBLE_EQ(s.std, 1.0);
  EXPECT_FALSE(s.single_seed);
  const Stat one = summarize({4.0});
  EXPECT_TRUE(one.single_seed);
  EXPECT_EQ(one.std, 0.0);
}

TEST(Methods, SingleMemberEnsembleEqualsStandard) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  Method de = parse_method("deep_ensemble");
  de.n = 1;
  const TrainedModel a = train_method(parse_method("standard"), c, data.train, 3);
  const TrainedModel b = train_method(de, c, data.train, 3);
  ASSERT_EQ(b.members.size(), 1u);
  EXPECT_TRUE(bit_equal(a.members[0], b.members[0]));
}

TEST(Methods, CoarseDcwaWarns) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  EXPECT_TRUE(train_method(parse_method("dcwa:modelwise:cel"), c, data.train, 0).coarse_grain_warning);
  EXPECT_FALSE(train_method(parse_method("dcwa:layerwise:cel"), c, data.train, 0).coarse_grain_warning);
}

TEST(Methods, InferenceMembers) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  EXPECT_EQ(train_method(parse_method("dca:modelwise:nll"), c, data.train, 0).members.size(), 2u);
  EXPECT_EQ(train_method(parse_method("dca:layerwise:nll"), c, data.train, 0).members.size(), 4u);
  EXPECT_EQ(train_method(parse_method("dcwa:layerwise:nll"), c, data.train, 0).members.size(), 1u);
}

TEST(Shift, SeverityZeroMatchesInDomain) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  auto res = run_indomain({parse_method("standard"), parse_method("dca:trunkwise:cel")}, data, c, {0});
  std::vector<TrainedModel> models;
  for (auto& m : res.models) models.push_back(std::move(*m));
  const auto rows = run_shift(models, data.test, {CorruptionKind::gaussian_noise}, {0, 3}, c, 7);
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_EQ(rows[k].severity, 0);
    EXPECT_EQ(rows[k].report->nll, res.rows[k].report->nll);
    EXPECT_EQ(rows[k].report->accuracy, res.rows[k].report->accuracy);
    EXPECT_EQ(rows[k].report->ece, res.rows[k].report->ece);
    EXPECT_EQ(rows[k].report->brier, res.rows[k].report->brier);
  }
  EXPECT_THROW(run_shift(models, data.test, {CorruptionKind::gaussian_noise}, {6}, c, 7), ConfigError);
}

TEST(Indomain, FailedCellIsRecorded) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  Method bad = parse_method("dca:layerwise:cel");
  bad.n = 1;
  const auto res = run_indomain({parse_method("standard"), bad}, data, c, {0});
  EXPECT_TRUE(res.rows[0].report.has_value());
  EXPECT_FALSE(res.rows[1].report.has_value());
  EXPECT_EQ(res.rows[1].error_kind, ErrorKind::config);
  EXPECT_FALSE(res.rows[1].error.empty());
}

TEST(Indomain, ParallelMatchesSequential) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  const std::vector<Method> methods{parse_method("standard"), parse_method("dcwa:layerwise:nll")};
  const auto seq = run_indomain(methods, data, c, {0, 1});
  c.jobs = 3;
  const auto par = run_indomain(methods, data, c, {0, 1});
  for (std::size_t k = 0; k < seq.rows.size(); ++k) EXPECT_EQ(seq.rows[k].report->nll, par.rows[k].report->nll);
}

TEST(Ablation, GridSizes) {
  EXPECT_EQ(ablation_methods(AblationAxis::granularity).size(), 10u);
  EXPECT_EQ(ablation_methods(AblationAxis::loss).size(), 6u);
  EXPECT_EQ(ablation_methods(AblationAxis::instance_count, {2, 4}).size(), 4u);
  EXPECT_THROW(parse_axis("depth"), ConfigError);
}

TEST(Individual, NeedsModelwiseBank) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  const ParameterBank bank = init_bank(c.model, Granularity::layerwise, 2, 0);
  EXPECT_THROW(individual_analysis(bank, data.test), ConfigError);
  const ParameterBank mw = init_bank(c.model, Granularity::modelwise, 3, 0);
  const IndividualReport r = individual_analysis(mw, data.test);
  EXPECT_EQ(r.members.size(), 3u);
  EXPECT_GT(r.diversity.pairwise_kl, 0.0);
}

TEST(Checkpoints, TrainedModelRoundTrip) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  for (const char* name : {"standard", "deep_ensemble", "dca:layerwise:cel", "dcwa:layerwise:cel"}) {
    const Method m = parse_method(name);
    const TrainedModel tm = train_method(m, c, data.train, 2);
    const TrainedModel back = model_from_checkpoint(m, decode_checkpoint(encode_checkpoint(model_checkpoint(tm))), c, 2);
    ASSERT_EQ(back.members.size(), tm.members.size()) << name;
    for (std::size_t k = 0; k < tm.members.size(); ++k) EXPECT_TRUE(bit_equal(back.members[k], tm.members[k])) << name;
  }
  const TrainedModel layer = train_method(parse_method("dca:layerwise:cel"), c, data.train, 2);
  EXPECT_THROW(model_from_checkpoint(parse_method("dca:trunkwise:cel"), model_checkpoint(layer), c, 2), DataError);
  const TrainedModel ens = train_method(parse_method("deep_ensemble"), c, data.train, 2);
  EXPECT_THROW(model_from_checkpoint(parse_method("standard"), model_checkpoint(ens), c, 2), DataError);
}

TEST(Ood, RocAreaMatchesAuroc) {
  ExperimentConfig c = tiny();
  const ExperimentData data = make_experiment_data(c);
  const TrainedModel tm = train_method(parse_method("standard"), c, data.train, 0);
  const auto rows = run_ood({tm}, data.test, data.ood, c);
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_NEAR(roc_area(rows[0].roc), rows[0].report.auroc, 1e-12);
  EXPECT_EQ(roc_csv(rows).substr(0, 15), "method,seed,fpr");
}

TEST(Tables, LongCsvHasOneRowPerMetric) {
  ResultRow r{parse_method("standard"), 1, 0, "", 0, MetricsReport{0.5, 1.0, 0.1, 0.2, 15, std::nullopt}, {}, false, {}};
  const std::string csv = to_long_csv({r});
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
  const auto j = summary_json({r, r});
  ASSERT_EQ(j.size(), 1u);
  EXPECT_EQ(j[0]["metrics"]["nll"]["count"].get<int>(), 2);
}
