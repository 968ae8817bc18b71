#include <gtest/gtest.h>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "mal/baselines/heuristics.hpp"
#include "mal/baselines/ridge.hpp"
#include "support.hpp"

using namespace mal;

namespace {

// |observed - expected| within 3 binomial standard deviations.
void expect_frequency(std::size_t hits, std::size_t draws, double p) {
    const double n = static_cast<double>(draws);
    const double sd = std::sqrt(n * p * (1 - p));
    EXPECT_LE(std::abs(static_cast<double>(hits) - n * p), 3 * sd + 1e-9) << "p = " << p;
}

std::vector<Label> classes(std::initializer_list<int> c) {
    std::vector<Label> out;
    for (int k : c) out.push_back(Label::of_class(k));
    return out;
}

Tensor<double> cosines(const std::vector<std::vector<double>>& x) {
    Tensor<double> s(x.size(), x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < x.size(); ++j) {
            double d = 0, a = 0, b = 0;
            for (std::size_t k = 0; k < x[i].size(); ++k) {
                d += x[i][k] * x[j][k];
                a += x[i][k] * x[i][k];
                b += x[j][k] * x[j][k];
            }
            s(i, j) = d / (std::max(std::sqrt(a), 1e-8) * std::max(std::sqrt(b), 1e-8));
        }
    return s;
}

}  // namespace

TEST(Random, SingleUnknownItemIsCertain) {
    SupportPartition p(3);
    p.reveal(0);
    p.reveal(2);
    Rng rng(1);
    for (int k = 0; k < 100; ++k) EXPECT_EQ(select_random(p, rng), 1u);
}

TEST(Random, UniformOverTheUnknownSet) {
    SupportPartition p(6);
    p.reveal(1);
    p.reveal(4);
    Rng rng(2);
    std::map<std::size_t, std::size_t> hits;
    const std::size_t draws = 100000;
    for (std::size_t k = 0; k < draws; ++k) {
        const auto i = select_random(p, rng);
        ASSERT_TRUE(p.is_unknown(i));
        ++hits[i];
    }
    EXPECT_EQ(hits.size(), 4u);
    for (auto [i, n] : hits) expect_frequency(n, draws, 0.25);
    SupportPartition empty(1);
    empty.reveal(0);
    EXPECT_THROW(select_random(empty, rng), PoolExhausted);
}

TEST(Balanced, PicksAnUnderRepresentedClass) {
    const auto truth = classes({0, 0, 1, 1, 2, 2});
    SupportPartition p(6);
    p.reveal(0);
    Rng rng(3);
    for (int k = 0; k < 200; ++k) {
        const auto i = select_balanced_oracle(p, truth, TaskKind::classification, 3, rng);
        EXPECT_NE(truth[i].cls, 0);
    }
    SupportPartition fresh(6);
    std::set<int> seen;
    for (int k = 0; k < 200; ++k)
        seen.insert(truth[select_balanced_oracle(fresh, truth, TaskKind::classification, 3, rng)].cls);
    EXPECT_EQ(seen.size(), 3u);
    EXPECT_THROW(select_balanced_oracle(fresh, truth, TaskKind::regression, 3, rng), ConfigError);
}

TEST(Balanced, RevealedCountsStayWithinOne) {
    Rng rng(4);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 2 + static_cast<std::size_t>(trial % 5), per = 1 + static_cast<std::size_t>(trial % 4);
        std::vector<Label> truth;
        for (std::size_t c = 0; c < n; ++c)
            for (std::size_t k = 0; k < per; ++k) truth.push_back(Label::of_class(static_cast<int>(c)));
        std::shuffle(truth.begin(), truth.end(), rng);
        SupportPartition p(truth.size());
        std::vector<std::size_t> count(n);
        while (!p.unknown().empty()) {
            const auto i = select_balanced_oracle(p, truth, TaskKind::classification, n, rng);
            p.reveal(i);
            ++count[static_cast<std::size_t>(truth[i].cls)];
            const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
            ASSERT_LE(*hi - *lo, 1u);
        }
    }
}

TEST(MinMaxCos, PicksTheDissimilarCandidate) {
    // known e1; candidate 1 leans toward e1 (cos 0.9), candidate 2 is e2.
    const auto s = cosines({{1, 0}, {0.9, std::sqrt(1 - 0.81)}, {0, 1}});
    SupportPartition p(3);
    p.reveal(0);
    EXPECT_EQ(select_min_max_cos(p, s), 2u);
}

TEST(MinMaxCos, IdenticalCandidatesPickTheLowestIndex) {
    const auto s = cosines({{1, 2}, {1, 2}, {1, 2}, {1, 2}});
    SupportPartition p(4);
    EXPECT_EQ(select_min_max_cos(p, s), 0u);
    p.reveal(0);
    EXPECT_EQ(select_min_max_cos(p, s), 1u);
}

TEST(MinMaxCos, MatchesBruteForce) {
    Rng rng(5);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::vector<double>> x(5, std::vector<double>(3));
        for (auto& v : x)
            for (auto& e : v) e = g(rng);
        const auto s = cosines(x);
        SupportPartition p(5);
        const std::size_t known = static_cast<std::size_t>(trial % 4);
        for (std::size_t k = 0; k < known; ++k) p.reveal(k);
        std::size_t best = 0;
        double best_score = 1e9;
        for (std::size_t i = known; i < 5; ++i) {
            double mx = -1e9;
            for (std::size_t j = 0; j < 5; ++j) {
                if (j == i) continue;
                const bool peer = known > 0 ? j < known : true;
                if (peer) mx = std::max(mx, s(i, j));
            }
            if (mx < best_score) {
                best_score = mx;
                best = i;
            }
        }
        EXPECT_EQ(select_min_max_cos(p, s), best);
        EXPECT_EQ(select_min_max_cos(p, s), select_min_max_cos(p, s));
    }
}

TEST(Entropy, ZeroEntropyItemIsNeverPicked) {
    SupportPartition p(2);
    Rng rng(6);
    const std::vector<double> uniform{0.25, 0.25, 0.25, 0.25}, onehot{1, 0, 0, 0};
    const std::vector<double> h{shannon_entropy(uniform), shannon_entropy(onehot)};
    for (int k = 0; k < 1000; ++k) EXPECT_EQ(select_entropy(p, h, rng), 0u);
}

TEST(Entropy, SamplesProportionallyToEntropy) {
    SupportPartition p(3);
    Rng rng(7);
    const std::size_t draws = 100000;
    std::vector<std::size_t> hits(3);
    const std::vector<double> h{std::log(2.0), 0.0, std::log(2.0)};
    for (std::size_t k = 0; k < draws; ++k) ++hits[select_entropy(p, h, rng)];
    expect_frequency(hits[0], draws, 0.5);
    EXPECT_EQ(hits[1], 0u);
    expect_frequency(hits[2], draws, 0.5);

    std::vector<std::size_t> flat(3);
    for (std::size_t k = 0; k < draws; ++k) ++flat[select_entropy(p, std::vector<double>(3, 0.7), rng)];
    for (auto n : flat) expect_frequency(n, draws, 1.0 / 3);
    std::vector<std::size_t> none(3);
    for (std::size_t k = 0; k < draws; ++k) ++none[select_entropy(p, std::nullopt, rng)];
    for (auto n : none) expect_frequency(n, draws, 1.0 / 3);
}

TEST(PopularEntropy, ScoresFollowTheHistogramOracle) {
    RatingScale sc;
    std::vector<RatingRecord> r;
    std::int64_t user = 0;
    auto add = [&](std::int64_t movie, double rating, int times) {
        for (int k = 0; k < times; ++k) r.push_back({user++, movie, rating});
    };
    add(1, 4.0, 10);                   // unanimous
    add(2, 3.0, 50), add(2, 5.0, 50);  // two levels, 100 ratings
    add(3, 3.0, 5), add(3, 5.0, 5);    // two levels, 10 ratings
    add(4, 1.0, 2), add(4, 2.0, 2), add(4, 3.0, 2), add(4, 4.0, 2);
    const auto s = popularity_entropy_scores(r, sc);
    EXPECT_EQ(s.at(1), 0.0);
    EXPECT_NEAR(s.at(2), std::log(100.0) * std::log(2.0), 1e-12);
    EXPECT_NEAR(s.at(3), std::log(10.0) * std::log(2.0), 1e-12);
    EXPECT_NEAR(s.at(4), std::log(8.0) * std::log(4.0), 1e-12);
    EXPECT_THROW(s.at(99), MissingScore);

    std::vector<Item> support(4);
    for (std::size_t i = 0; i < 4; ++i) support[i].id = static_cast<std::int64_t>(i + 1);
    SupportPartition p(4);
    // ranking 2 > 4 > 3 > 1
    EXPECT_EQ(select_popular_entropy(p, support, s), 1u);
    p.reveal(1);
    EXPECT_EQ(select_popular_entropy(p, support, s), 3u);
    p.reveal(3);
    EXPECT_EQ(select_popular_entropy(p, support, s), 2u);
}

TEST(Ridge, HugePenaltyPredictsTheMean) {
    Eigen::MatrixXd X(1, 2);
    X << 0.3, -1.2;
    Eigen::VectorXd y(1);
    y << 4.0;
    const auto fit = ridge_fit(X, y, 1e12);
    Eigen::VectorXd q(2);
    q << 5, 5;
    EXPECT_NEAR(fit.predict(q), 4.0, 1e-9);
    Eigen::MatrixXd X3(3, 1);
    X3 << 1, 2, 3;
    Eigen::VectorXd y3(3);
    y3 << 1, 5, 3;
    EXPECT_NEAR(ridge_fit(X3, y3, 1e12).predict(Eigen::VectorXd::Constant(1, 10.0)), 3.0, 1e-9);
}

TEST(Ridge, TwoPointsOnALineAreFitExactly) {
    Eigen::MatrixXd X(2, 1);
    X << 1, 3;
    Eigen::VectorXd y(2);
    y << 2, 6;
    const auto fit = ridge_fit(X, y, 0.0);
    EXPECT_NEAR(fit.predict(Eigen::VectorXd::Constant(1, 2.0)), 4.0, 1e-12);
    EXPECT_NEAR(fit.intercept, 0.0, 1e-12);
}

TEST(Ridge, MatchesTheNormalEquations) {
    Rng rng(8);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::MatrixXd X(5, 3);
        Eigen::VectorXd y(5);
        for (int i = 0; i < 5; ++i) {
            for (int j = 0; j < 3; ++j) X(i, j) = g(rng);
            y[i] = g(rng);
        }
        const double lambda = 0.5;
        // Augmented system with an unpenalized intercept column.
        Eigen::MatrixXd A(5, 4);
        A << Eigen::VectorXd::Ones(5), X;
        Eigen::MatrixXd P = Eigen::MatrixXd::Identity(4, 4) * lambda;
        P(0, 0) = 0;
        const Eigen::VectorXd theta = (A.transpose() * A + P).ldlt().solve(A.transpose() * y);
        const auto fit = ridge_fit(X, y, lambda);
        EXPECT_NEAR(fit.intercept, theta[0], 1e-8);
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(fit.w[j], theta[j + 1], 1e-8);
    }
}

TEST(Ridge, TuningPicksAPenaltyPerRevealedCount) {
    auto spec = test::tiny_ratings(6, 3, 3);
    const auto src = EpisodeSource::synthetic(spec);
    EmbeddingTable features;
    features.dim = spec.latent_rank;
    for (std::size_t m = 0; m < spec.num_movies; ++m) {
        std::vector<double> row(spec.latent_rank);
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = src.world()->movie_factors(m, k);
        features.rows.emplace(static_cast<std::int64_t>(m), row);
    }
    RidgeBaseline ridge(features);
    ridge.tune(src, 20, 3);
    ASSERT_EQ(ridge.chosen().size(), 3u);
    const auto ep = src.generate(99);
    const auto order = RidgeBaseline::random_order(ep);
    const auto pred = ridge.predict(ep, order, 3, ridge.lambda_for(3));
    EXPECT_EQ(pred.size(), 3u);
    EXPECT_TRUE(std::isfinite(RidgeBaseline::rmse(ep, pred)));
    EXPECT_THROW(ridge.lambda_for(4), ContractViolation);
}

TEST(UniqueClasses, ExactFormulaMatchesEnumeration) {
    // Enumerate all ordered draws for small pools.
    for (std::size_t classes : {2u, 3u}) {
        for (std::size_t per : {1u, 2u}) {
            const std::size_t n = classes * per;
            for (std::size_t t = 0; t <= n; ++t) {
                std::vector<std::size_t> idx(n);
                std::iota(idx.begin(), idx.end(), std::size_t{0});
                double total = 0, count = 0;
                do {
                    std::set<std::size_t> seen;
                    for (std::size_t k = 0; k < t; ++k) seen.insert(idx[k] / per);
                    total += static_cast<double>(seen.size());
                    count += 1;
                } while (std::next_permutation(idx.begin(), idx.end()));
                EXPECT_NEAR(expected_unique_classes_random(classes, per, t), total / count, 1e-12);
            }
        }
    }
    // 10 classes, 5 per class, t = 10
    double miss = 1;
    for (int i = 0; i < 10; ++i) miss *= (45.0 - i) / (50.0 - i);
    EXPECT_NEAR(expected_unique_classes_random(10, 5, 10), 10 * (1 - miss), 1e-12);
}

TEST(Policies, NamesRoundTrip) {
    for (auto p : {PolicyKind::active, PolicyKind::random, PolicyKind::balanced, PolicyKind::min_max_cos,
                   PolicyKind::entropy, PolicyKind::popular_entropy})
        EXPECT_EQ(parse_policy(to_string(p)), p);
    EXPECT_THROW(parse_policy("greedy"), ConfigError);
}
