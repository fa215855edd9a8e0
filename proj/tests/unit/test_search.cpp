// SPDX-License-Identifier: Apache-2.0
#include "dqss/kernels.hpp"
#include "dqss/search.hpp"
#include "dqss/toy.hpp"

#include "support/oracles.hpp"
#include "support/search_gradient.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace dqss {
namespace {

TEST(Theta, SoftmaxNormalizedAndShiftInvariant)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<float> d(0.0f, 3.0f);
    for (int trial = 0; trial < 200; ++trial) {
        // Dyadic values keep raw + shift exact in float.
        auto dyadic = [&] { return std::round(d(rng) * 1024.0f) / 1024.0f; };
        std::vector<float> raw(1 + trial % 6);
        for (float& v : raw) v = dyadic();
        const auto t = softmax_theta(raw);
        double sum = 0.0;
        for (float v : t) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-6);

        const float shift = dyadic() * 10.0f;
        std::vector<float> shifted = raw;
        for (float& v : shifted) v += shift;
        EXPECT_EQ(softmax_theta(shifted), t);
    }
    EXPECT_THROW(softmax_theta(std::vector<float>{}), ShapeError);
}

TEST(Theta, InitializationGivesUniformQuarter)
{
    const ThetaState th(default_ptq_pool(), {"a", "b", "c"});
    EXPECT_EQ(th.parameter_count(), 24u);
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_EQ(th.alpha(l)->storage(), std::vector<float>(4, 0.1f));
        for (float v : th.theta_alpha(l)) EXPECT_EQ(v, 0.25f);
        for (float v : th.theta_beta(l)) EXPECT_EQ(v, 0.25f);
    }
    EXPECT_NEAR(th.mean_entropy(), std::log(4.0), 1e-6);
    EXPECT_THROW(ThetaState({}, {"a"}), SearchError);
}

TEST(Theta, CloneIsDeep)
{
    ThetaState a(default_ptq_pool(), {"x"});
    ThetaState b = a.clone();
    b.alpha(0)->storage()[2] = 5.0f;
    EXPECT_EQ(a.alpha(0)->storage()[2], 0.1f);
}

TEST(Finalize, ArgmaxTiesResolveToFirstIndex)
{
    EXPECT_EQ(argmax_first(std::vector<float>{0.25f, 0.25f, 0.25f, 0.25f}), 0u);
    EXPECT_EQ(argmax_first(std::vector<float>{0.1f, 0.4f, 0.4f, 0.1f}), 1u);
    EXPECT_EQ(argmax_first(std::vector<float>{-1.0f, -3.0f, -0.5f}), 2u);
    EXPECT_THROW(argmax_first(std::vector<float>{}), ShapeError);

    const ThetaState th(default_ptq_pool(), {"a", "b"});
    for (const auto& [name, la] : finalize(th)) {
        EXPECT_EQ(la.activation, CalibratorKind::MaxAbs) << name;
        EXPECT_EQ(la.weight, CalibratorKind::MaxAbs) << name;
    }
}

TEST(Finalize, InvariantUnderRawShifts)
{
    std::mt19937_64 rng(2);
    std::normal_distribution<float> d(0.0f, 1.0f);
    for (int trial = 0; trial < 50; ++trial) {
        ThetaState th(default_ptq_pool(), {"a", "b", "c"});
        for (std::size_t l = 0; l < 3; ++l) {
            for (float& v : th.alpha(l)->storage()) v = d(rng);
            for (float& v : th.beta(l)->storage()) v = d(rng);
        }
        const Assignment before = finalize(th);
        ThetaState shifted = th.clone();
        for (std::size_t l = 0; l < 3; ++l) {
            const float s = d(rng) * 4.0f;
            for (float& v : shifted.alpha(l)->storage()) v += s;
            for (float& v : shifted.beta(l)->storage()) v -= s;
        }
        EXPECT_EQ(finalize(shifted), before);
    }
}

TEST(Schedule, LearningRateDecayAndBatchSize)
{
    const SearchConfig cfg;
    EXPECT_DOUBLE_EQ(cfg.lr_at(1), 1e-4);
    EXPECT_NEAR(cfg.lr_at(2), 1e-5, 1e-18);
    EXPECT_NEAR(cfg.lr_at(3), 1e-6, 1e-18);
    EXPECT_EQ(cfg.effective_batch(256), 32u);
    EXPECT_EQ(cfg.effective_batch(5), 1u);
    SearchConfig fixed;
    fixed.batch_size = 100;
    EXPECT_EQ(fixed.effective_batch(40), 40u);
}

TEST(Schedule, EpochOrderIsDeterministicPermutation)
{
    const auto a = epoch_order(100, 42, 1);
    EXPECT_EQ(a, epoch_order(100, 42, 1));
    EXPECT_NE(a, epoch_order(100, 42, 2));
    EXPECT_NE(a, epoch_order(100, 43, 1));
    std::vector<std::size_t> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> iota(100);
    std::iota(iota.begin(), iota.end(), std::size_t{0});
    EXPECT_EQ(sorted, iota);
}

class TwoLayerGradient : public ::testing::TestWithParam<std::uint64_t> {};

TEST_P(TwoLayerGradient, MatchesFiniteDifferences)
{
    for (MixtureMode mode : {MixtureMode::Efficient, MixtureMode::Naive}) {
        const auto r = testing::check_two_layer_gradient(GetParam(), mode);
        EXPECT_LT(r.relative_error, 1e-3);
        EXPECT_LT(r.oracle_vs_tape_loss, 1e-5);
    }
}

INSTANTIATE_TEST_SUITE_P(Seeds, TwoLayerGradient, ::testing::Range<std::uint64_t>(1, 11));

struct SmallSearch {
    Graph graph;
    CalibrationSet calib;
    QParamTable table;
};

SmallSearch small_search()
{
    SmallSearch s{toy::moons_mlp(3), toy::moons_images(64, 1), {}};
    const auto pool = default_ptq_pool();
    s.table = calibrate_graph(s.graph, s.calib.batch(), pool, 4);
    return s;
}

TEST(Search, ReproducibleAcrossRunsAndThreadCounts)
{
    const SmallSearch s = small_search();
    SearchConfig cfg;
    cfg.lr = 0.5;
    std::vector<SearchTrace> traces;
    std::vector<Assignment> picks;
    for (int threads : {1, 2, 1}) {
        kernels::set_num_threads(threads);
        SearchModel m = build_search_model(s.graph, default_ptq_pool(), s.table);
        traces.push_back(search(m, s.calib, cfg));
        picks.push_back(finalize(m.theta()));
    }
    kernels::set_num_threads(1);
    for (std::size_t r = 1; r < traces.size(); ++r) {
        EXPECT_EQ(picks[r], picks[0]);
        ASSERT_EQ(traces[r].snapshots.size(), 4u);
        for (std::size_t e = 0; e < 4; ++e) {
            EXPECT_EQ(traces[r].snapshots[e].alpha, traces[0].snapshots[e].alpha);
            EXPECT_EQ(traces[r].snapshots[e].beta, traces[0].snapshots[e].beta);
        }
        for (std::size_t e = 0; e < 3; ++e) EXPECT_EQ(traces[r].epochs[e].loss, traces[0].epochs[e].loss);
    }
    EXPECT_NE(traces[0].snapshots[3].alpha, traces[0].snapshots[0].alpha);
}

TEST(Search, CallbackSeesEveryEpoch)
{
    const SmallSearch s = small_search();
    SearchModel m = build_search_model(s.graph, default_ptq_pool(), s.table);
    std::vector<std::size_t> seen;
    const SearchTrace t = search(m, s.calib, SearchConfig{}, [&](const EpochReport& r) { seen.push_back(r.epoch); });
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_NEAR(t.epochs[1].lr, 1e-5, 1e-18);
}

TEST(Search, ZeroEpochsKeepsInitializationAndPicksFirstStrategy)
{
    const SmallSearch s = small_search();
    SearchModel m = build_search_model(s.graph, default_ptq_pool(), s.table);
    SearchConfig cfg;
    cfg.epochs = 0;
    const SearchTrace t = search(m, s.calib, cfg);
    EXPECT_TRUE(t.epochs.empty());
    ASSERT_EQ(t.snapshots.size(), 1u);
    EXPECT_EQ(finalize(m.theta()), uniform_assignment(s.graph, CalibratorKind::MaxAbs));
}

TEST(Search, SingleStrategyPoolKeepsThetaAtOne)
{
    const SmallSearch s = small_search();
    SearchModel m = build_search_model(s.graph, {CalibratorKind::EQ}, s.table);
    SearchConfig cfg;
    cfg.lr = 1.0;
    (void)search(m, s.calib, cfg);
    for (std::size_t l = 0; l < m.theta().num_layers(); ++l) {
        EXPECT_EQ(m.theta().theta_alpha(l), std::vector<float>{1.0f});
        EXPECT_EQ(m.theta().theta_beta(l), std::vector<float>{1.0f});
    }
    EXPECT_EQ(finalize(m.theta()), uniform_assignment(s.graph, CalibratorKind::EQ));
}

TEST(Search, SingleStrategyMixtureEqualsUniformQuantizedGraph)
{
    const SmallSearch s = small_search();
    for (CalibratorKind k : default_ptq_pool()) {
        const SearchModel m = build_search_model(s.graph, {k}, s.table);
        const QuantizedGraph q = apply_assignment(s.graph, uniform_assignment(s.graph, k), s.table);
        const Tensor x = s.calib.batch();
        const auto a = testing::to_double(m.predict(x).data());
        const auto b = testing::to_double(q.predict(x).data());
        EXPECT_LE(testing::relative_inf_error(a, b), 1e-6) << calibrator_name(k);
    }
}

TEST(Search, MissingQParamsNameLayerAndStrategy)
{
    SmallSearch s = small_search();
    s.table.begin()->second.erase(CalibratorKind::KL);
    try {
        (void)build_search_model(s.graph, default_ptq_pool(), s.table);
        FAIL() << "expected SearchError";
    } catch (const SearchError& e) {
        EXPECT_NE(std::string(e.what()).find("'kl'"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find(s.table.begin()->first), std::string::npos) << e.what();
    }
    EXPECT_THROW(apply_assignment(s.graph, uniform_assignment(s.graph, CalibratorKind::KL), s.table), SearchError);
    EXPECT_THROW(apply_assignment(s.graph, Assignment{}, s.table), SearchError);
}

TEST(Search, NonFiniteLossRaisesDivergence)
{
    std::vector<Layer> layers(1);
    layers[0].kind = LayerKind::Linear;
    layers[0].name = "fc";
    layers[0].weight = make_param(Tensor(Shape{2, 2}, 3e38f), false);
    Graph g({2}, 2, std::move(layers));
    QParamTable table;
    table["fc"][CalibratorKind::MaxAbs] = {QuantParams::symmetric(1.0f, 8), QuantParams::symmetric(3e38f, 8)};
    SearchModel m = build_search_model(g, {CalibratorKind::MaxAbs}, table);
    CalibrationSet calib;
    calib.sample_shape = {2};
    calib.inputs = {Tensor(Shape{2}, 1.0f), Tensor(Shape{2}, 1.0f)};
    calib.labels = {0, 1};
    try {
        (void)search(m, calib, SearchConfig{});
        FAIL() << "expected divergence";
    } catch (const SearchDivergedError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch 1"), std::string::npos) << msg;
        EXPECT_NE(msg.find("fc act="), std::string::npos) << msg;
    } catch (const NonFiniteError&) {
        // Debug builds stop at the first overflowing op.
    }
}

TEST(Distribution, CountsPerTensorClass)
{
    Assignment a;
    a["l1"] = {CalibratorKind::KL, CalibratorKind::ADMM};
    a["l2"] = {CalibratorKind::KL, CalibratorKind::MaxAbs};
    a["l3"] = {CalibratorKind::EQ, CalibratorKind::ADMM};
    const StrategyDistribution d = report_distribution(a);
    EXPECT_EQ(d.strategies, default_ptq_pool());
    EXPECT_EQ(d.activation, (std::vector<std::size_t>{0, 2, 1, 0}));
    EXPECT_EQ(d.weight, (std::vector<std::size_t>{1, 0, 0, 2}));
}

} // namespace
} // namespace dqss
