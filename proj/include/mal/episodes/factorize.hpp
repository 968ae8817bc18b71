#pragma once

// Biased matrix factorization by SGD; item vectors seed the lookup encoder.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "mal/core/errors.hpp"
#include "mal/core/rng.hpp"
#include "mal/core/tensor.hpp"
#include "mal/episodes/task.hpp"
#include "mal/model/encoders.hpp"

namespace mal {

struct FactorizeOptions {
    std::size_t rank = 4;
    double lr = 0.02;
    double l2 = 0.01;
    std::size_t epochs = 30;
    double init_scale = 0.1;
    std::uint64_t seed = 11;
};

struct FactorModel {
    std::size_t rank = 0;
    std::map<std::int64_t, std::size_t> user_index, item_index;
    Tensor<double> user_vec, item_vec;  // (users x rank), (items x rank)
    std::vector<double> user_bias, item_bias;
    double global = 0;
    std::vector<double> mse_history;  // training MSE after each epoch

    double predict(std::int64_t user, std::int64_t item) const {
        const auto u = user_index.at(user);
        const auto m = item_index.at(item);
        double s = global + user_bias[u] + item_bias[m];
        for (std::size_t k = 0; k < rank; ++k) s += user_vec(u, k) * item_vec(m, k);
        return s;
    }

    double mse(const std::vector<RatingRecord>& ratings) const {
        double total = 0;
        for (const auto& r : ratings) {
            const double e = r.rating - predict(r.user, r.item);
            total += e * e;
        }
        return ratings.empty() ? 0.0 : total / static_cast<double>(ratings.size());
    }

    EmbeddingTable item_table() const {
        EmbeddingTable t;
        t.dim = rank;
        for (const auto& [id, m] : item_index) {
            std::vector<double> row(rank);
            for (std::size_t k = 0; k < rank; ++k) row[k] = item_vec(m, k);
            t.rows.emplace(id, std::move(row));
        }
        return t;
    }
};

// Minimizes (r - x_u·x_m - b_u - b_m - beta)² + l2·(|x_u|² + |x_m|² + b_u² + b_m²).
inline FactorModel factorize_ratings(const std::vector<RatingRecord>& ratings, const FactorizeOptions& opt) {
    if (ratings.empty()) throw ConfigError("ratings", "cannot factorize an empty ratings table");
    if (!(opt.lr > 0)) throw ConfigError("lr", "must be positive");
    FactorModel fm;
    fm.rank = opt.rank;
    for (const auto& r : ratings) {
        fm.user_index.emplace(r.user, fm.user_index.size());
        fm.item_index.emplace(r.item, fm.item_index.size());
    }
    Rng rng(derive_seed(opt.seed, 0x666163ULL));
    std::normal_distribution<double> init(0.0, opt.init_scale);
    fm.user_vec = Tensor<double>(fm.user_index.size(), opt.rank);
    fm.item_vec = Tensor<double>(fm.item_index.size(), opt.rank);
    for (auto& x : fm.user_vec.data()) x = init(rng);
    for (auto& x : fm.item_vec.data()) x = init(rng);
    fm.user_bias.assign(fm.user_index.size(), 0.0);
    fm.item_bias.assign(fm.item_index.size(), 0.0);
    double mean = 0;
    for (const auto& r : ratings) mean += r.rating;
    fm.global = mean / static_cast<double>(ratings.size());

    std::vector<std::size_t> order(ratings.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<std::pair<std::size_t, std::size_t>> rows(ratings.size());
    for (std::size_t i = 0; i < ratings.size(); ++i)
        rows[i] = {fm.user_index.at(ratings[i].user), fm.item_index.at(ratings[i].item)};

    const double lr = opt.lr, l2 = opt.l2;
    for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (auto i : order) {
            const auto [u, m] = rows[i];
            double pred = fm.global + fm.user_bias[u] + fm.item_bias[m];
            for (std::size_t k = 0; k < opt.rank; ++k) pred += fm.user_vec(u, k) * fm.item_vec(m, k);
            const double e = ratings[i].rating - pred;
            fm.global += lr * e;
            fm.user_bias[u] += lr * (e - l2 * fm.user_bias[u]);
            fm.item_bias[m] += lr * (e - l2 * fm.item_bias[m]);
            for (std::size_t k = 0; k < opt.rank; ++k) {
                const double pu = fm.user_vec(u, k), qm = fm.item_vec(m, k);
                fm.user_vec(u, k) += lr * (e * qm - l2 * pu);
                fm.item_vec(m, k) += lr * (e * pu - l2 * qm);
            }
        }
        const double mse = fm.mse(ratings);
        if (!std::isfinite(mse))
            throw TrainingFault("factorization diverged at epoch " + std::to_string(epoch + 1) +
                                "; lower the step size");
        fm.mse_history.push_back(mse);
    }
    return fm;
}

}  // namespace mal
