#pragma once

// Desk-scale task generators. Classification draws fresh cluster centers per
// episode; ratings come from a fixed latent-factor world with a new user per episode.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "mal/core/rng.hpp"
#include "mal/core/tensor.hpp"
#include "mal/episodes/task.hpp"

namespace mal {

namespace detail {

inline std::vector<double> unit_direction(std::size_t dim, Rng& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> v(dim);
    double norm = 0;
    do {
        norm = 0;
        for (auto& x : v) {
            x = n01(rng);
            norm += x * x;
        }
    } while (norm < 1e-24);
    norm = std::sqrt(norm);
    for (auto& x : v) x /= norm;
    return v;
}

// First k entries of a seeded shuffle of 0..n-1.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(k);
    return idx;
}

inline void assign_ids(Episode& ep) {
    std::int64_t next = 0;
    for (auto& it : ep.support) it.id = next++;
    for (auto& it : ep.eval) it.id = next++;
}

}  // namespace detail

inline Episode gen_classification_episode(const TaskSpec& spec, std::uint64_t seed) {
    MAL_REQUIRE(spec.kind == TaskKind::classification, "classification generator needs a classification spec");
    spec.validate();
    Rng rng(derive_seed(seed, 0x636c73ULL));
    std::normal_distribution<double> noise(0.0, 1.0);

    Episode ep;
    ep.spec = spec;
    ep.seed = seed;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        const auto center = detail::unit_direction(spec.feature_dim, rng);
        auto draw = [&] {
            Item it;
            it.label = Label::of_class(static_cast<int>(c));
            it.features.resize(spec.feature_dim);
            for (std::size_t j = 0; j < spec.feature_dim; ++j)
                it.features[j] = static_cast<float>(center[j] + spec.sigma_cluster * noise(rng));
            return it;
        };
        for (std::size_t k = 0; k < spec.support_per_class; ++k) ep.support.push_back(draw());
        for (std::size_t k = 0; k < spec.eval_per_class; ++k) ep.eval.push_back(draw());
    }
    std::shuffle(ep.support.begin(), ep.support.end(), rng);
    std::shuffle(ep.eval.begin(), ep.eval.end(), rng);
    detail::assign_ids(ep);
    return ep;
}

// Latent-factor ratings world: rating = quantize(x_u·x_m + b_m + beta + noise).
struct RatingsWorld {
    std::size_t rank = 4;
    double factor_scale = 0.5;
    double global_mean = 3.5;
    double noise = 0.3;
    RatingScale scale;
    Tensor<double> movie_factors;  // (movies x rank)
    std::vector<double> movie_bias;

    std::size_t num_movies() const { return movie_bias.size(); }

    static RatingsWorld from_spec(const TaskSpec& spec) {
        RatingsWorld w;
        w.rank = spec.latent_rank;
        w.factor_scale = spec.factor_scale;
        w.global_mean = spec.global_mean;
        w.noise = spec.rating_noise;
        w.scale = spec.scale;
        Rng rng(derive_seed(spec.world_seed, 0x776f726cULL));
        std::normal_distribution<double> f(0.0, spec.factor_scale), b(0.0, spec.movie_bias_scale);
        w.movie_factors = Tensor<double>(spec.num_movies, spec.latent_rank);
        for (auto& x : w.movie_factors.data()) x = f(rng);
        w.movie_bias.resize(spec.num_movies);
        for (auto& x : w.movie_bias) x = b(rng);
        return w;
    }

    std::vector<double> sample_user(Rng& rng) const {
        std::normal_distribution<double> f(0.0, factor_scale);
        std::vector<double> u(rank);
        for (auto& x : u) x = f(rng);
        return u;
    }

    double raw_rating(const std::vector<double>& user, std::size_t movie) const {
        double s = global_mean + movie_bias.at(movie);
        for (std::size_t k = 0; k < rank; ++k) s += user[k] * movie_factors(movie, k);
        return s;
    }

    double rate(const std::vector<double>& user, std::size_t movie, Rng& rng) const {
        std::normal_distribution<double> eps(0.0, 1.0);
        return scale.quantize(raw_rating(user, movie) + noise * eps(rng));
    }

    // Ratings from a population of training users (for factorization and popularity scores).
    std::vector<RatingRecord> training_ratings(std::size_t users, std::size_t per_user, std::uint64_t seed) const {
        MAL_REQUIRE(per_user <= num_movies(), "training_ratings: per_user exceeds the catalogue");
        std::vector<RatingRecord> out;
        out.reserve(users * per_user);
        for (std::size_t u = 0; u < users; ++u) {
            Rng rng(derive_seed(seed, 0x75736572ULL, u));
            const auto user = sample_user(rng);
            for (auto m : detail::sample_without_replacement(num_movies(), per_user, rng))
                out.push_back({static_cast<std::int64_t>(u), static_cast<std::int64_t>(m), rate(user, m, rng)});
        }
        return out;
    }
};

// Fresh user per episode; support and eval are disjoint movie sets. Items are
// keyed by movie id and carry no dense features.
inline Episode gen_ratings_episode(const TaskSpec& spec, const RatingsWorld& world, std::uint64_t seed) {
    MAL_REQUIRE(spec.kind == TaskKind::regression, "ratings generator needs a regression spec");
    spec.validate();
    const std::size_t need = spec.support_size + spec.eval_size;
    if (world.num_movies() < need) throw GenerationError("ratings world has fewer movies than support + eval");
    Rng rng(derive_seed(seed, 0x72617465ULL));
    const auto user = world.sample_user(rng);
    const auto movies = detail::sample_without_replacement(world.num_movies(), need, rng);

    Episode ep;
    ep.spec = spec;
    ep.seed = seed;
    for (std::size_t k = 0; k < need; ++k) {
        Item it;
        it.id = static_cast<std::int64_t>(movies[k]);
        it.label = Label::of_rating(world.rate(user, movies[k], rng));
        (k < spec.support_size ? ep.support : ep.eval).push_back(std::move(it));
    }
    return ep;
}

}  // namespace mal
