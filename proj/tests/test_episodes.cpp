#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "mal/episodes/factorize.hpp"
#include "mal/episodes/generator.hpp"
#include "mal/training/trainer.hpp"
#include "support.hpp"

using namespace mal;

namespace {

bool same_episode(const Episode& a, const Episode& b) {
    if (a.support.size() != b.support.size() || a.eval.size() != b.eval.size()) return false;
    auto eq = [](const Item& x, const Item& y) { return x.id == y.id && x.features == y.features && x.label == y.label; };
    return std::equal(a.support.begin(), a.support.end(), b.support.begin(), eq) &&
           std::equal(a.eval.begin(), a.eval.end(), b.eval.begin(), eq);
}

}  // namespace

TEST(Classification, SetSizes) {
    TaskSpec s;
    s.num_classes = 5;
    s.support_per_class = 5;
    EXPECT_EQ(gen_classification_episode(s, 1).support.size(), 25u);
    s.num_classes = 10;
    s.eval_per_class = 1;
    EXPECT_EQ(gen_classification_episode(s, 1).eval.size(), 10u);
}

TEST(Classification, EveryClassHasItsQuota) {
    TaskSpec s;
    s.num_classes = 4;
    s.support_per_class = 3;
    s.eval_per_class = 2;
    const auto ep = gen_classification_episode(s, 8);
    std::vector<int> sup(4), ev(4);
    for (const auto& it : ep.support) ++sup[static_cast<std::size_t>(it.label.cls)];
    for (const auto& it : ep.eval) ++ev[static_cast<std::size_t>(it.label.cls)];
    for (int c = 0; c < 4; ++c) {
        EXPECT_EQ(sup[static_cast<std::size_t>(c)], 3);
        EXPECT_EQ(ev[static_cast<std::size_t>(c)], 2);
    }
}

TEST(Classification, ZeroSpreadMakesClassMembersIdentical) {
    TaskSpec s;
    s.sigma_cluster = 0;
    const auto ep = gen_classification_episode(s, 3);
    for (const auto& a : ep.support)
        for (const auto& b : ep.support)
            if (a.label == b.label) {
                EXPECT_EQ(a.features, b.features);
            }
}

TEST(Classification, SameSeedSameEpisode) {
    TaskSpec s;
    EXPECT_TRUE(same_episode(gen_classification_episode(s, 42), gen_classification_episode(s, 42)));
    EXPECT_FALSE(same_episode(gen_classification_episode(s, 42), gen_classification_episode(s, 43)));
}

TEST(Classification, BadSpecsAreConfigErrors) {
    TaskSpec s;
    s.num_classes = 1;
    EXPECT_THROW(gen_classification_episode(s, 1), ConfigError);
    s = TaskSpec{};
    s.budget = 100;
    EXPECT_THROW(gen_classification_episode(s, 1), ConfigError);
}

TEST(Ratings, SizesAndDisjointIds) {
    TaskSpec s;
    s.kind = TaskKind::regression;
    s.support_size = 50;
    s.eval_size = 10;
    const auto src = EpisodeSource::synthetic(s);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ep = src.generate(seed);
        ASSERT_EQ(ep.support.size(), 50u);
        ASSERT_EQ(ep.eval.size(), 10u);
        std::set<std::int64_t> ids;
        for (const auto& it : ep.support) ids.insert(it.id);
        for (const auto& it : ep.eval) ids.insert(it.id);
        EXPECT_EQ(ids.size(), 60u);
        for (const auto& it : ep.support) EXPECT_TRUE(s.scale.valid(it.label.rating));
    }
    EXPECT_TRUE(same_episode(src.generate(5), src.generate(5)));
}

TEST(Ratings, NoiselessRankOneRatingsAreMonotoneInTheItemFactor) {
    TaskSpec s;
    s.kind = TaskKind::regression;
    s.latent_rank = 1;
    s.rating_noise = 0;
    s.num_movies = 40;
    s.support_size = 30;
    s.eval_size = 10;
    auto world = RatingsWorld::from_spec(s);
    for (std::size_t m = 0; m < world.num_movies(); ++m) {
        world.movie_factors(m, 0) = std::abs(world.movie_factors(m, 0));
        world.movie_bias[m] = 0;
    }
    Rng rng(1);
    const std::vector<double> user{0.8};
    std::vector<std::pair<double, double>> fr;
    for (std::size_t m = 0; m < world.num_movies(); ++m)
        fr.emplace_back(world.movie_factors(m, 0), world.rate(user, m, rng));
    std::sort(fr.begin(), fr.end());
    for (std::size_t k = 1; k < fr.size(); ++k) EXPECT_LE(fr[k - 1].second, fr[k].second);
}

TEST(Ratings, QuantizationRoundsHalfStepsUp) {
    RatingScale sc;
    EXPECT_EQ(sc.quantize(3.26), 3.5);
    EXPECT_EQ(sc.quantize(3.25), 3.5);
    EXPECT_EQ(sc.quantize(3.24), 3.0);
    EXPECT_EQ(sc.quantize(-4.0), 0.5);
    EXPECT_EQ(sc.quantize(9.0), 5.0);
    EXPECT_TRUE(sc.valid(4.5));
    EXPECT_FALSE(sc.valid(3.3));
    EXPECT_EQ(sc.levels(), 10u);
}

TEST(Ratings, StoreWithTooFewRatingsPerUserFails) {
    RatingsStore store = build_ratings_store({{1, 10, 4.0}, {1, 11, 3.0}}, {});
    TaskSpec s = test::tiny_ratings(2, 1, 1);
    s.source = "dataset";
    EXPECT_THROW(gen_ratings_episode(s, store, 1), GenerationError);
}

TEST(Invariants, BalancedLabelingOnTightClustersIsPerfect) {
    // Oracle sanity anchor: with identical class members a nearest-label
    // rule over a class-balanced labeled set classifies every eval item.
    TaskSpec s;
    s.sigma_cluster = 0;
    s.budget = 5;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto ep = gen_classification_episode(s, seed);
        Rng rng(seed);
        const auto order = balanced_actions(ep, rng);
        for (const auto& e : ep.eval) {
            bool found = false;
            for (std::size_t k = 0; k < s.num_classes; ++k)
                found |= ep.support[order[k]].features == e.features && ep.support[order[k]].label == e.label;
            EXPECT_TRUE(found);
        }
    }
}

TEST(Factorize, ConstantRatingsGiveTheGlobalMean) {
    std::vector<RatingRecord> r;
    for (int u = 0; u < 5; ++u)
        for (int m = 0; m < 4; ++m) r.push_back({u, m, 3.5});
    FactorizeOptions o;
    o.rank = 0;
    o.epochs = 20;
    const auto fm = factorize_ratings(r, o);
    EXPECT_NEAR(fm.global + fm.user_bias[0] + fm.item_bias[0], 3.5, 1e-6);
    EXPECT_LT(fm.mse_history.back(), 1e-10);
}

TEST(Factorize, ExactlyFactorableTableIsRecovered) {
    // r = p_u q_m with p = (1, 2), q = (1.5, 2.5).
    const std::vector<RatingRecord> r{{0, 0, 1.5}, {0, 1, 2.5}, {1, 0, 3.0}, {1, 1, 5.0}};
    FactorizeOptions o;
    o.rank = 1;
    o.l2 = 0;
    o.lr = 0.05;
    o.epochs = 4000;
    o.init_scale = 0.5;
    const auto fm = factorize_ratings(r, o);
    EXPECT_LT(fm.mse(r), 1e-3);
    EXPECT_LT(fm.mse_history.back(), fm.mse_history.front());
}

TEST(Factorize, SingleRatingIsFitExactly) {
    FactorizeOptions o;
    o.l2 = 0;
    o.epochs = 2000;
    const std::vector<RatingRecord> r{{7, 9, 4.5}};
    const auto fm = factorize_ratings(r, o);
    EXPECT_NEAR(fm.predict(7, 9), 4.5, 1e-6);
}

TEST(Factorize, MseDecreasesOnAWorldSample) {
    TaskSpec s;
    s.kind = TaskKind::regression;
    const auto world = RatingsWorld::from_spec(s);
    const auto r = world.training_ratings(60, 40, 3);
    const auto fm = factorize_ratings(r, {});
    EXPECT_LT(fm.mse_history.back(), fm.mse_history.front());
    EXPECT_EQ(fm.item_table().dim, 4u);
}

TEST(Factorize, DivergenceIsATrainingFault) {
    const std::vector<RatingRecord> r{{0, 0, 5.0}, {0, 1, 0.5}, {1, 0, 4.0}, {1, 1, 1.0}};
    FactorizeOptions o;
    o.lr = 50;
    o.init_scale = 5;
    EXPECT_THROW(factorize_ratings(r, o), TrainingFault);
    EXPECT_THROW(factorize_ratings({}, {}), ConfigError);
}
