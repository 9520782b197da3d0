#include <cmath>

#include <gtest/gtest.h>

#include "causalmon/discovery.hpp"
#include "causalmon/error.hpp"
#include "causalmon/stats.hpp"
#include "causalmon/synth.hpp"
#include "support.hpp"

namespace causalmon {
namespace {

using testing::make_dataset;
using testing::TempDir;
using testing::toy_data;

bool has_candidate(const std::vector<ScoredParent>& c, int var, int lag) {
    return std::any_of(c.begin(), c.end(), [&](const ScoredParent& p) { return p.parent == LagVar{var, lag}; });
}

std::vector<std::tuple<int, int, int>> keys(const std::vector<LagLink>& links) {
    std::vector<std::tuple<int, int, int>> out;
    for (const auto& l : links) out.emplace_back(l.src, l.dst, l.lag);
    std::sort(out.begin(), out.end());
    return out;
}

const std::vector<std::tuple<int, int, int>> kPlanted = {{0, 0, 1}, {0, 1, 1}, {1, 2, 2}};

TimeSeriesDataset standardized_toy() { return standardize(toy_data()).first; }

DiscoveryConfig toy_config() {
    DiscoveryConfig cfg;
    cfg.alpha = 0.01;
    return cfg;
}

TEST(PcStage, WhiteNoiseHasNoParents) {
    VarProcessSpec white;
    white.n_vars = 1;
    white.noise_std = {1.0};
    const auto pc = pc_stage(generate_var(white, 2000), 2, DiscoveryConfig{});
    EXPECT_TRUE(pc[0].empty());
}

TEST(PcStage, PairKeepsTheDrivingLag) {
    VarProcessSpec pair;
    pair.n_vars = 2;
    pair.noise_std = {1.0, 1.0};
    pair.weights = {{0, 1, 1, 0.8}};
    const auto pc = pc_stage(generate_var(pair, 2000), 2, DiscoveryConfig{});
    EXPECT_TRUE(has_candidate(pc[1], 0, 1));
    EXPECT_EQ(pc[1].front().parent, (LagVar{0, 1}));
}

TEST(PcStage, DeterministicCopyIsRetained) {
    VarProcessSpec copy;
    copy.n_vars = 2;
    copy.noise_std = {1.0, 0.0};
    copy.weights = {{0, 1, 1, 1.0}};
    const auto pc = pc_stage(generate_var(copy, 500), 2, DiscoveryConfig{});
    ASSERT_TRUE(has_candidate(pc[1], 0, 1));
    EXPECT_LT(pc[1].front().pvalue, 1e-12);
}

TEST(PcStage, ToyCandidatesContainPlantedLinksSortedByScore) {
    const auto pc = pc_stage(standardized_toy(), 2, toy_config());
    EXPECT_TRUE(has_candidate(pc[0], 0, 1));
    EXPECT_TRUE(has_candidate(pc[1], 0, 1));
    EXPECT_TRUE(has_candidate(pc[2], 1, 2));
    for (const auto& cands : pc) {
        for (std::size_t k = 1; k < cands.size(); ++k) {
            EXPECT_GE(cands[k - 1].score, cands[k].score);
            EXPECT_GT(cands[k].cmi(), 0.0);
        }
    }
}

TEST(PcStage, MaxParentsTruncates) {
    auto cfg = toy_config();
    cfg.alpha = 0.2;
    cfg.max_parents = 1;
    const auto pc = pc_stage(standardized_toy(), 3, cfg);
    for (const auto& c : pc) EXPECT_LE(c.size(), 1u);
}

TEST(PcStage, ThreadCountDoesNotChangeResult) {
    auto one = toy_config();
    one.threads = 1;
    auto four = toy_config();
    four.threads = 4;
    const auto ds = generate_var(random_spec(6, 4), 1500);
    const auto a = pc_stage(ds, 2, one);
    const auto b = pc_stage(ds, 2, four);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
        ASSERT_EQ(a[j].size(), b[j].size());
        for (std::size_t k = 0; k < a[j].size(); ++k) {
            EXPECT_EQ(a[j][k].parent, b[j][k].parent);
            EXPECT_EQ(a[j][k].score, b[j][k].score);
        }
    }
}

TEST(PcStage, RejectsBadConfiguration) {
    DiscoveryConfig cfg;
    cfg.alpha = 1.5;
    EXPECT_THROW(pc_stage(toy_data(), 2, cfg), InputError);
    EXPECT_THROW(pc_stage(toy_data(), 0, DiscoveryConfig{}), InputError);
    EXPECT_THROW(pc_stage(make_dataset(Eigen::MatrixXd::Random(12, 2)), 2, DiscoveryConfig{}), InsufficientSamples);
}

TEST(MciStage, ToyMatchesFullConditioningOracle) {
    const auto ds = standardized_toy();
    const auto links = mci_stage(ds, pc_stage(ds, 2, toy_config()), 2, toy_config());
    EXPECT_EQ(keys(links), keys(oracle_full_ci(toy_data(), 2, 0.01)));
    EXPECT_EQ(keys(links), kPlanted);
    for (const auto& l : links) {
        EXPECT_GT(std::abs(l.mci), 0.4);
        EXPECT_EQ(l.coeff, 0.0);
    }
}

TEST(MciStage, SpuriousIndirectLinkIsRemoved) {
    // x1 reaches x3 only through x2 at lag 3 = 1 + 2.
    const auto ds = standardized_toy();
    ParentCandidates forced(3);
    forced[0] = {{{0, 1}, 0.5, 0.0}};
    forced[1] = {{{0, 1}, 0.6, 0.0}};
    forced[2] = {{{1, 2}, 0.6, 0.0}, {{0, 3}, 0.3, 0.0}};
    const auto links = mci_stage(ds, forced, 3, toy_config());
    EXPECT_FALSE(std::any_of(links.begin(), links.end(), [](const LagLink& l) { return l.src == 0 && l.dst == 2; }));
    EXPECT_TRUE(std::any_of(links.begin(), links.end(), [](const LagLink& l) { return l.src == 1 && l.dst == 2; }));
}

TEST(MciStage, IndependentPairDropsForcedCandidates) {
    VarProcessSpec pair;
    pair.n_vars = 2;
    pair.noise_std = {1.0, 1.0};
    const auto ds = generate_var(pair, 2000);
    ParentCandidates forced(2);
    forced[1] = {{{0, 1}, 0.1, 0.0}};
    EXPECT_TRUE(mci_stage(ds, forced, 1, toy_config()).empty());
}

TEST(FitCoefficients, ExactRecoveryWithoutNoise) {
    VarProcessSpec s;
    s.n_vars = 2;
    s.noise_std = {1.0, 0.0};
    s.weights = {{0, 1, 1, 0.8}};
    const auto ds = generate_var(s, 500);
    const auto model = fit_coefficients(ds, {{0, 1, 1, 0.0, 0.0, 0.5}}, 1);
    EXPECT_NEAR(model.links[0].coeff, 0.8, 1e-8);
}

TEST(FitCoefficients, OrthogonalParentsMatchOracle) {
    VarProcessSpec s;
    s.n_vars = 3;
    s.noise_std = {1.0, 1.0, 1.0};
    s.weights = {{0, 2, 1, 0.5}, {1, 2, 1, -0.3}};
    const auto model = fit_coefficients(generate_var(s, 2000), {{0, 2, 1, 0, 0, 0.4}, {1, 2, 1, 0, 0, -0.3}}, 1);
    ASSERT_EQ(model.links.size(), 2u);
    EXPECT_NEAR(model.links[0].coeff, 0.525419145038417, 1e-12);
    EXPECT_NEAR(model.links[1].coeff, -0.2960420083742663, 1e-12);
}

TEST(FitCoefficients, ToyTargetThree) {
    const auto model = fit_coefficients(toy_data(), {{1, 2, 2, 0, 0, 0.6}}, 2);
    EXPECT_NEAR(model.links[0].coeff, 0.60794797738063799, 1e-12);
    EXPECT_EQ(model.preprocess.kept, toy_data().names);
}

TEST(FitCoefficients, StandardizedToyModel) {
    const auto model =
        fit_coefficients(standardized_toy(), {{0, 0, 1, 0, 0, 0.5}, {0, 1, 1, 0, 0, 0.6}, {1, 2, 2, 0, 0, 0.6}}, 2);
    EXPECT_NEAR(model.links[0].coeff, 0.6585067890602629, 1e-12);
    EXPECT_NEAR(model.links[1].coeff, 0.7250046110676182, 1e-12);
    EXPECT_NEAR(model.links[2].coeff, 0.6518944904857589, 1e-12);
}

CausalModel model_with(std::vector<double> coeffs, int n_vars = 3, int tau_max = 1) {
    CausalModel m;
    for (int i = 0; i < n_vars; ++i) m.names.push_back("v" + std::to_string(i));
    m.tau_max = tau_max;
    int src = 0;
    for (double c : coeffs) {
        m.links.push_back({src % n_vars, 0, 1 + src / n_vars, c, 0.0, c});
        ++src;
    }
    m.canonicalize();
    return m;
}

TEST(PruneBelowMean, RetainedLinkMean) {
    const auto pruned = prune_below_mean(model_with({0.9, 0.8, 0.1}), PruneScope::kRetainedLinks);
    ASSERT_EQ(pruned.links.size(), 2u);
    for (const auto& l : pruned.links) EXPECT_GE(std::abs(l.coeff), 0.6);
    EXPECT_EQ(prune_below_mean(model_with({0.4, 0.4, 0.4}), PruneScope::kRetainedLinks).links.size(), 3u);
    EXPECT_EQ(prune_below_mean(model_with({-0.9, 0.8, 0.1}), PruneScope::kRetainedLinks).links.size(), 2u);
}

TEST(PruneBelowMean, FullTensorMeanAndZeroCoefficients) {
    // 0.9 + 0.8 + 0.1 over 3 x 3 x 1 entries gives a mean of 0.2.
    const auto pruned = prune_below_mean(model_with({0.9, 0.8, 0.1}), PruneScope::kFullTensor);
    EXPECT_EQ(pruned.links.size(), 2u);
    EXPECT_EQ(prune_below_mean(model_with({0.5, 0.0, 0.3})).links.size(), 2u);
}

TEST(PruneBelowMean, ToyModelSurvivors) {
    const auto fitted =
        fit_coefficients(standardized_toy(), {{0, 0, 1, 0, 0, 0.5}, {0, 1, 1, 0, 0, 0.6}, {1, 2, 2, 0, 0, 0.6}}, 2);
    // Full tensor: mean = 2.0354 / 18 = 0.113, all three survive.
    EXPECT_EQ(keys(prune_below_mean(fitted).links), kPlanted);
    // Retained links: mean = 0.678, the two weaker links fall below it.
    const auto narrow = prune_below_mean(fitted, PruneScope::kRetainedLinks);
    EXPECT_EQ(keys(narrow.links), (std::vector<std::tuple<int, int, int>>{{0, 1, 1}}));
}

TEST(Discover, ToyProcessWithFixedSampling) {
    PreprocessConfig pcfg;
    pcfg.sampling_override = 1;
    pcfg.tau_max_override = 2;
    DiscoveryTrace trace;
    const auto model = discover(toy_data(), pcfg, toy_config(), &trace);
    EXPECT_EQ(keys(model.links), kPlanted);
    EXPECT_EQ(trace.prune_calls, 1);
    EXPECT_EQ(keys(trace.mci), kPlanted);
    EXPECT_EQ(model.preprocess.t_s, 1);
    EXPECT_EQ(model.tau_max, 2);
    EXPECT_NEAR(model.links[0].coeff, 0.6585067890602629, 1e-12);
    model.validate();
}

TEST(Discover, OrderingInvariantsAndDeterminism) {
    const auto ds = generate_var(random_spec(5, 8), 2000);
    PreprocessConfig pcfg;
    pcfg.sampling_override = 1;
    pcfg.tau_max_override = 3;
    const auto a = discover(ds, pcfg, DiscoveryConfig{});
    const auto b = discover(ds, pcfg, DiscoveryConfig{});
    EXPECT_EQ(dump_json(model_to_json(a)), dump_json(model_to_json(b)));
    std::size_t total = 0;
    for (int j = 0; j < a.n_vars(); ++j) {
        const auto& parents = a.parents[static_cast<std::size_t>(j)];
        total += parents.size();
        for (std::size_t k = 1; k < parents.size(); ++k) {
            const auto& prev = a.links[*a.find_link(parents[k - 1].var, j, parents[k - 1].lag)];
            const auto& cur = a.links[*a.find_link(parents[k].var, j, parents[k].lag)];
            EXPECT_TRUE(std::abs(prev.mci) > std::abs(cur.mci) ||
                        (std::abs(prev.mci) == std::abs(cur.mci) && prev.parent() < cur.parent()));
        }
    }
    EXPECT_EQ(total, a.links.size());
    for (const auto& l : a.links) {
        EXPECT_GE(l.lag, 1);
        EXPECT_LE(l.lag, a.tau_max);
        EXPECT_NE(l.coeff, 0.0);
    }
}

TEST(Discover, IndependentNoiseYieldsFewLinks) {
    VarProcessSpec white;
    white.n_vars = 5;
    white.noise_std.assign(5, 1.0);
    white.seed = 42;
    PreprocessConfig pcfg;
    pcfg.sampling_override = 1;
    pcfg.tau_max_override = 2;
    EXPECT_LE(discover(generate_var(white, 2000), pcfg, DiscoveryConfig{}).links.size(), 2u);
}

TEST(ModelJson, RoundTripIsBitFaithful) {
    PreprocessConfig pcfg;
    pcfg.sampling_override = 1;
    pcfg.tau_max_override = 2;
    const auto model = discover(toy_data(), pcfg, toy_config());
    TempDir dir;
    save_model(dir.file("model.json"), model);
    const auto back = load_model(dir.file("model.json"));
    EXPECT_EQ(back.names, model.names);
    ASSERT_EQ(back.links.size(), model.links.size());
    for (std::size_t k = 0; k < model.links.size(); ++k) {
        EXPECT_EQ(back.links[k].coeff, model.links[k].coeff);
        EXPECT_EQ(back.links[k].pvalue, model.links[k].pvalue);
        EXPECT_EQ(back.links[k].mci, model.links[k].mci);
    }
    EXPECT_EQ(back.preprocess.scaling.at("x2").std, model.preprocess.scaling.at("x2").std);

    auto j = model_to_json(model);
    j["links"][0]["lag"] = 7;
    EXPECT_THROW(model_from_json(j), InputError);
    j = model_to_json(model);
    j["links"].push_back(j["links"][0]);
    EXPECT_THROW(model_from_json(j), InputError);
    EXPECT_THROW(model_from_json(json{{"names", {"a"}}}), InputError);
}

TEST(ModelDot, CollapsesLags) {
    auto m = model_with({0.9, 0.5});
    m.links.push_back({0, 1, 2, 0.3, 0, 0.3});
    m.links.push_back({0, 1, 1, 0.2, 0, 0.2});
    m.tau_max = 2;
    m.canonicalize();
    const auto dot = to_dot(m);
    EXPECT_NE(dot.find("\"v0\" -> \"v1\" [label=\"1,2\""), std::string::npos);
    EXPECT_NE(dot.find("\"v1\" -> \"v0\" [label=\"1\""), std::string::npos);
}

}  // namespace
}  // namespace causalmon
