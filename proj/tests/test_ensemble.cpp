#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "protoens/ensemble.hpp"
#include "protoens/error.hpp"
#include "protoens/oracle.hpp"
#include "test_helpers.hpp"

namespace protoens {
namespace {

using testing::max_abs_diff;
using testing::random_branch;
using testing::random_branch_like;

TEST(VotingConfigTest, ResolvesWeights) {
    EXPECT_EQ(VotingConfig{}.resolved_weights(4), std::vector<double>(4, 0.25));
    EXPECT_EQ(VotingConfig::uniform(2).weights, (std::vector<double>{0.5, 0.5}));
    EXPECT_THROW(VotingConfig{}.resolved_weights(0), InvalidConfig);
    EXPECT_THROW((VotingConfig{{0.5, 0.5}}.resolved_weights(3)), InvalidConfig);
    EXPECT_THROW((VotingConfig{{0.7, 0.7}}.resolved_weights(2)), InvalidConfig);
    EXPECT_THROW((VotingConfig{{1.5, -0.5}}.resolved_weights(2)), InvalidConfig);
    EXPECT_NO_THROW((VotingConfig{{0.2, 0.3, 0.5}}.resolved_weights(3)));
}

TEST(VotingConfigTest, ParsesNames) {
    EXPECT_EQ(parse_vote_mode("logit-sum"), VoteMode::kLogitSum);
    EXPECT_EQ(parse_vote_mode("posterior-mean"), VoteMode::kPosteriorMean);
    EXPECT_FALSE(parse_vote_mode("mean").has_value());
    EXPECT_EQ(parse_strategy("fusion"), Strategy::kFusion);
    EXPECT_FALSE(parse_strategy("stack").has_value());
    EXPECT_EQ(to_string(Strategy::kVoting), "voting");
    EXPECT_EQ(to_string(VoteMode::kLogitSum), "logit-sum");
}

TEST(MixTest, PosteriorMeanArithmetic) {
    const std::vector<ProbMap> maps{ProbMap(1, 1, 2, {0.9f, 0.1f}), ProbMap(1, 1, 2, {0.5f, 0.5f})};
    const std::vector<double> w{0.5, 0.5};
    const auto out = mix_probability_maps(maps, w);
    EXPECT_NEAR(out.pixel(0)[0], 0.7, 1e-7);
    EXPECT_NEAR(out.pixel(0)[1], 0.3, 1e-7);
    const std::vector<ProbMap> bad{ProbMap(1, 1, 2, {0.9f, 0.1f}), ProbMap(1, 1, 3, {0.2f, 0.3f, 0.5f})};
    EXPECT_THROW(mix_probability_maps(bad, w), ShapeMismatch);
    EXPECT_THROW(mix_probability_maps(maps, std::vector<double>{1.0}), InvalidConfig);
}

TEST(VoteTest, SingleBranchIdentity) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const auto b = random_branch(rng, 6, 6, 4, 2, 1);
        const std::vector<BackboneBranch> one{b};
        const auto alone = predict_branch(b);
        EXPECT_EQ(vote(one, VotingConfig{}).values().size(), alone.probs.values().size());
        EXPECT_LE(max_abs_diff(vote(one, VotingConfig{}).values(), alone.probs.values()), 0.0);
        EXPECT_LE(max_abs_diff(vote(one, {{}, VoteMode::kLogitSum}).values(), alone.probs.values()), 0.0);
        for (auto strategy : {Strategy::kSingle, Strategy::kVoting, Strategy::kFusion}) {
            const auto e = predict_ensemble(one, strategy);
            EXPECT_EQ(e.mask, predict_mask(b.query, alone.prototypes));
        }
    }
}

TEST(VoteTest, CopiesOfOneBranchAreExact) {
    std::mt19937_64 rng(22);
    const auto b = random_branch(rng, 8, 8, 5, 1, 2);
    const auto alone = predict_branch(b).probs;
    for (std::size_t n = 2; n <= 4; ++n) {
        const std::vector<BackboneBranch> copies(n, b);
        const auto pm = vote(copies, VotingConfig{});
        EXPECT_LE(max_abs_diff(pm.values(), alone.values()), 1e-7);
        const auto ls = vote(copies, {{}, VoteMode::kLogitSum});
        EXPECT_LE(max_abs_diff(ls.values(), alone.values()), 1e-6);
    }
}

TEST(VoteTest, NormalizedAndPermutationEquivariant) {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const auto b0 = random_branch(rng, 5, 7, 3, 2, 1, "a");
        std::vector<BackboneBranch> branches{b0, random_branch_like(rng, b0, 6, "b"),
                                             random_branch_like(rng, b0, 2, "c")};
        std::vector<double> w{0.2, 0.5, 0.3};
        for (auto mode : {VoteMode::kPosteriorMean, VoteMode::kLogitSum}) {
            const auto base = vote(branches, {w, mode});
            EXPECT_LE(base.normalization_error(), 1e-6);
            std::vector<std::size_t> order{2, 0, 1};
            std::vector<BackboneBranch> pb;
            std::vector<double> pw;
            for (auto i : order) {
                pb.push_back(branches[i]);
                pw.push_back(w[i]);
            }
            EXPECT_LE(max_abs_diff(vote(pb, {pw, mode}).values(), base.values()), 1e-7);
        }
    }
}

TEST(VoteTest, ModesAgreeOnMaskForOneBranch) {
    std::mt19937_64 rng(24);
    for (int trial = 0; trial < 20; ++trial) {
        const std::vector<BackboneBranch> one{random_branch(rng, 6, 6, 4, 3, 1)};
        const auto a = predict_ensemble(one, Strategy::kVoting, {{}, VoteMode::kPosteriorMean});
        const auto b = predict_ensemble(one, Strategy::kVoting, {{}, VoteMode::kLogitSum});
        EXPECT_EQ(a.mask, b.mask);
    }
}

TEST(VoteTest, MatchesOracleInBothModes) {
    std::mt19937_64 rng(25);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int trial = 0; trial < 30; ++trial) {
        const auto b0 = random_branch(rng, 6, 5, 4, 1 + trial % 2, 1 + trial % 3, "a");
        std::vector<BackboneBranch> branches{b0, random_branch_like(rng, b0, 7, "b")};
        std::vector<double> w{u(rng), u(rng)};
        const double sum = w[0] + w[1];
        for (auto& x : w) x /= sum;
        w[1] = 1.0 - w[0];
        const double alpha = trial % 2 ? 20.0 : 1.0;
        for (auto mode : {VoteMode::kPosteriorMean, VoteMode::kLogitSum}) {
            const auto got = vote(branches, {w, mode}, alpha);
            const auto want = oracle::oracle_vote(branches, w, mode, alpha);
            EXPECT_LE(max_abs_diff(got.values(), want.values()), 1e-6);
        }
    }
}

TEST(VoteTest, RejectsDifferentClassSets) {
    std::mt19937_64 rng(26);
    const std::vector<BackboneBranch> mixed{random_branch(rng, 4, 4, 3, 1, 1),
                                            random_branch(rng, 4, 4, 3, 2, 1)};
    EXPECT_THROW(vote(mixed, VotingConfig{}), EpisodeInconsistency);
}

TEST(FuseTest, ChannelArithmeticAndIdentity) {
    std::mt19937_64 rng(27);
    const auto b = random_branch(rng, 3, 3, 512, 1, 1, "vgg16");
    const std::vector<BackboneBranch> three{b, random_branch_like(rng, b, 2048, "resnet50"),
                                            random_branch_like(rng, b, 960, "mobilenet")};
    const auto fused = fuse(three);
    EXPECT_EQ(fused.query.channels(), 3520u);
    EXPECT_EQ(fused.supports[0].shots[0].features.channels(), 3520u);
    EXPECT_EQ(fused.backbone_id, "vgg16+resnet50+mobilenet");

    const std::vector<BackboneBranch> one{b};
    const auto same = fuse(one);
    EXPECT_EQ(same.query, b.query);
    EXPECT_EQ(same.supports[0].shots[0].features, b.supports[0].shots[0].features);
    EXPECT_EQ(same.supports[0].shots[0].mask, b.supports[0].shots[0].mask);
}

TEST(FuseTest, DuplicatedBranchKeepsProbabilities) {
    std::mt19937_64 rng(28);
    for (int trial = 0; trial < 20; ++trial) {
        const auto b = random_branch(rng, 6, 6, 5, 2, 2);
        const std::vector<BackboneBranch> twice{b, b};
        const auto fused = predict_branch(fuse(twice));
        const auto alone = predict_branch(b);
        EXPECT_LE(max_abs_diff(fused.probs.values(), alone.probs.values()), 1e-6);
        EXPECT_EQ(predict_ensemble(twice, Strategy::kFusion).mask,
                  predict_ensemble(std::vector<BackboneBranch>{b}, Strategy::kSingle).mask);
    }
}

TEST(FuseTest, MaskInvariantToBranchOrder) {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        const auto b0 = random_branch(rng, 6, 6, 3, 2, 1, "a");
        std::vector<BackboneBranch> branches{b0, random_branch_like(rng, b0, 4, "b"),
                                             random_branch_like(rng, b0, 5, "c")};
        const auto base = predict_ensemble(branches, Strategy::kFusion);
        std::reverse(branches.begin(), branches.end());
        EXPECT_EQ(predict_ensemble(branches, Strategy::kFusion).mask, base.mask);
    }
}

TEST(FuseTest, MatchesOracle) {
    std::mt19937_64 rng(30);
    for (int trial = 0; trial < 30; ++trial) {
        const auto b0 = random_branch(rng, 5, 6, 3, 1 + trial % 3, 1 + trial % 2, "a");
        std::vector<BackboneBranch> branches{b0, random_branch_like(rng, b0, 4, "b")};
        const double alpha = trial % 2 ? 20.0 : 1.0;
        const auto got = predict_branch(fuse(branches), alpha).probs;
        const auto want = oracle::oracle_fuse_predict(branches, alpha);
        EXPECT_LE(max_abs_diff(got.values(), want.values()), 1e-6);
    }
}

TEST(FuseTest, RejectsInconsistentEpisodes) {
    std::mt19937_64 rng(31);
    const auto b0 = random_branch(rng, 4, 4, 3, 1, 1, "a");
    auto b1 = random_branch_like(rng, b0, 3, "b");
    auto labels = std::vector<std::uint8_t>(b1.supports[0].shots[0].mask.labels().begin(),
                                            b1.supports[0].shots[0].mask.labels().end());
    labels[5] = labels[5] == 0 ? 1 : 0;
    b1.supports[0].shots[0].mask = DenseMask(4, 4, labels);
    EXPECT_THROW(fuse(std::vector<BackboneBranch>{b0, b1}), EpisodeInconsistency);

    auto b2 = random_branch_like(rng, b0, 3, "c");
    b2.supports[0].shots.push_back(b2.supports[0].shots[0]);
    EXPECT_THROW(fuse(std::vector<BackboneBranch>{b0, b2}), EpisodeInconsistency);

    auto b3 = random_branch_like(rng, b0, 3, "d");
    b3.query = testing::random_volume(rng, 5, 4, 3);
    EXPECT_THROW(fuse(std::vector<BackboneBranch>{b0, b3}), ShapeMismatch);
}

TEST(FuseTest, OptionalL2Normalization) {
    const FeatureVolume v(1, 2, 2, {3, 4, 0, 0});
    const auto n = l2_normalize_pixels(v);
    EXPECT_FLOAT_EQ(n.at(0, 0, 0), 0.6f);
    EXPECT_FLOAT_EQ(n.at(0, 0, 1), 0.8f);
    EXPECT_EQ(n.at(0, 1, 0), 0.0f);

    std::mt19937_64 rng(32);
    const auto b = random_branch(rng, 4, 4, 3, 1, 1);
    const auto fused = fuse(std::vector<BackboneBranch>{b}, FuseOptions{true});
    EXPECT_EQ(fused.query, l2_normalize_pixels(b.query));
}

TEST(PredictEnsembleTest, SingleWithSeveralBranchesIsConfigError) {
    std::mt19937_64 rng(33);
    const auto b = random_branch(rng, 4, 4, 3, 1, 1);
    EXPECT_THROW(predict_ensemble(std::vector<BackboneBranch>{b, b}, Strategy::kSingle), InvalidConfig);
    EXPECT_THROW(predict_ensemble(std::vector<BackboneBranch>{}, Strategy::kVoting), InvalidConfig);
}

TEST(PredictEnsembleTest, LabelsFollowPrototypeOrder) {
    std::mt19937_64 rng(34);
    const auto b = random_branch(rng, 5, 5, 4, 3, 1);
    const auto e = predict_ensemble(std::vector<BackboneBranch>{b}, Strategy::kVoting);
    EXPECT_EQ(e.labels, (std::vector<std::uint8_t>{0, 1, 2, 3}));
    for (auto l : e.mask.labels()) EXPECT_LE(l, 3);
}

}  // namespace
}  // namespace protoens
