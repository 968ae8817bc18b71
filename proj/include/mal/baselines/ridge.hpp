#pragma once

// Ridge regression on item feature vectors for the ratings task, with the
// penalty tuned separately for every revealed-label count.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

#include "mal/core/errors.hpp"
#include "mal/core/rng.hpp"
#include "mal/episodes/generator.hpp"
#include "mal/model/encoders.hpp"

namespace mal {

struct RidgeFit {
    Eigen::VectorXd w;
    double intercept = 0;

    double predict(const Eigen::VectorXd& x) const { return intercept + w.dot(x); }
};

// Unpenalized intercept; features and targets are centered first.
inline RidgeFit ridge_fit(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double lambda) {
    MAL_REQUIRE(X.rows() == y.size() && X.rows() >= 1, "ridge_fit: need at least one row per target");
    MAL_REQUIRE(lambda >= 0, "ridge_fit: lambda must be non-negative");
    const Eigen::RowVectorXd mu = X.colwise().mean();
    const double ybar = y.mean();
    const Eigen::MatrixXd Xc = X.rowwise() - mu;
    const Eigen::VectorXd yc = y.array() - ybar;
    Eigen::MatrixXd A = Xc.transpose() * Xc;
    A.diagonal().array() += lambda;
    RidgeFit fit;
    fit.w = A.completeOrthogonalDecomposition().solve(Xc.transpose() * yc);
    fit.intercept = ybar - mu.dot(fit.w);
    return fit;
}

inline std::vector<double> default_lambda_grid() { return {1e-3, 1e-2, 1e-1, 1.0, 3.0, 10.0, 30.0, 100.0, 1e3, 1e4}; }

// Features per item id (e.g. pretrained factor vectors).
class RidgeBaseline {
public:
    RidgeBaseline(EmbeddingTable features, std::vector<double> lambda_grid = default_lambda_grid())
        : features_(std::move(features)), grid_(std::move(lambda_grid)) {
        MAL_REQUIRE(!grid_.empty(), "ridge: empty lambda grid");
    }

    Eigen::VectorXd feature(std::int64_t id) const {
        auto it = features_.rows.find(id);
        if (it == features_.rows.end()) throw MissingEmbedding(id);
        return Eigen::Map<const Eigen::VectorXd>(it->second.data(), static_cast<Eigen::Index>(it->second.size()));
    }

    // Predictions for `targets` from the first `count` items of `order`.
    std::vector<double> predict(const Episode& ep, const std::vector<std::size_t>& order, std::size_t count,
                                double lambda) const {
        MAL_REQUIRE(count >= 1 && count <= order.size(), "ridge: need at least one revealed rating");
        Eigen::MatrixXd X(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(features_.dim));
        Eigen::VectorXd y(static_cast<Eigen::Index>(count));
        for (std::size_t k = 0; k < count; ++k) {
            const auto& it = ep.support.at(order[k]);
            X.row(static_cast<Eigen::Index>(k)) = feature(it.id);
            y[static_cast<Eigen::Index>(k)] = it.label.rating;
        }
        const auto fit = ridge_fit(X, y, lambda);
        std::vector<double> out;
        for (const auto& it : ep.eval) out.push_back(fit.predict(feature(it.id)));
        return out;
    }

    static double rmse(const Episode& ep, const std::vector<double>& pred) {
        double s = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const double d = pred[i] - ep.eval[i].label.rating;
            s += d * d;
        }
        return std::sqrt(s / static_cast<double>(pred.size()));
    }

    // Random reveal order for an episode (the baseline's query policy).
    static std::vector<std::size_t> random_order(const Episode& ep) {
        std::vector<std::size_t> order(ep.support.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng rng(derive_seed(ep.seed, 0x7269646765ULL));
        std::shuffle(order.begin(), order.end(), rng);
        return order;
    }

    // Picks lambda per revealed count t = 1..T by mean RMSE on validation episodes.
    void tune(const EpisodeSource& source, std::size_t episodes, std::uint64_t seed) {
        const std::size_t T = source.spec().budget;
        std::vector<std::vector<double>> err(T, std::vector<double>(grid_.size(), 0.0));
        for (std::size_t e = 0; e < episodes; ++e) {
            const Episode ep = source.generate(derive_seed(seed, 0x76616cULL, e));
            const auto order = random_order(ep);
            for (std::size_t t = 1; t <= T; ++t)
                for (std::size_t g = 0; g < grid_.size(); ++g) err[t - 1][g] += rmse(ep, predict(ep, order, t, grid_[g]));
        }
        chosen_.assign(T, grid_.front());
        for (std::size_t t = 0; t < T; ++t) {
            std::size_t best = 0;
            for (std::size_t g = 1; g < grid_.size(); ++g)
                if (err[t][g] < err[t][best]) best = g;
            chosen_[t] = grid_[best];
        }
    }

    double lambda_for(std::size_t count) const {
        MAL_REQUIRE(count >= 1 && count <= chosen_.size(), "ridge: lambda not tuned for this count");
        return chosen_[count - 1];
    }

    const std::vector<double>& chosen() const noexcept { return chosen_; }

private:
    EmbeddingTable features_;
    std::vector<double> grid_;
    std::vector<double> chosen_;
};

}  // namespace mal
