#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mal/core/errors.hpp"

namespace mal {

enum class TaskKind { classification, regression };

inline const char* to_string(TaskKind k) { return k == TaskKind::classification ? "classification" : "regression"; }

// Ordinal rating scale, e.g. 0.5..5 in steps of 0.5.
struct RatingScale {
    double min = 0.5;
    double max = 5.0;
    double step = 0.5;

    // Nearest step, ties rounded up, clipped to [min, max].
    double quantize(double raw) const {
        const double k = std::floor((raw - min) / step + 0.5);
        return std::clamp(min + k * step, min, max);
    }

    bool valid(double r) const {
        if (!std::isfinite(r) || r < min - 1e-9 || r > max + 1e-9) return false;
        const double k = (r - min) / step;
        return std::abs(k - std::round(k)) < 1e-6;
    }

    // Affine map of [min, max] onto [-1, 1].
    double encode(double r) const { return 2.0 * (r - min) / (max - min) - 1.0; }

    std::size_t levels() const { return static_cast<std::size_t>(std::llround((max - min) / step)) + 1; }
    std::size_t level_of(double r) const { return static_cast<std::size_t>(std::llround((r - min) / step)); }
};

struct Label {
    int cls = -1;
    double rating = 0.0;

    static Label of_class(int c) { return Label{c, 0.0}; }
    static Label of_rating(double r) { return Label{-1, r}; }

    friend bool operator==(const Label&, const Label&) = default;
};

struct Item {
    std::int64_t id = 0;
    std::vector<float> features;  // empty for id-keyed items
    Label label;
};

struct RatingRecord {
    std::int64_t user = 0;
    std::int64_t item = 0;
    double rating = 0;
};

struct TaskSpec {
    TaskKind kind = TaskKind::classification;
    std::string source = "synthetic";  // synthetic | dataset

    // classification
    std::size_t num_classes = 5;
    std::size_t support_per_class = 5;
    std::size_t eval_per_class = 1;
    std::size_t feature_dim = 16;
    double sigma_cluster = 0.2;

    // regression (ratings)
    std::size_t support_size = 50;
    std::size_t eval_size = 10;
    std::size_t latent_rank = 4;
    double rating_noise = 0.3;
    std::size_t num_movies = 200;
    double factor_scale = 0.5;
    double movie_bias_scale = 0.5;
    double global_mean = 3.5;
    std::uint64_t world_seed = 7;
    RatingScale scale;

    std::size_t budget = 5;  // label queries T

    std::size_t support_count() const {
        return kind == TaskKind::classification ? num_classes * support_per_class : support_size;
    }
    std::size_t eval_count() const {
        return kind == TaskKind::classification ? num_classes * eval_per_class : eval_size;
    }

    void validate() const {
        if (source != "synthetic" && source != "dataset") throw ConfigError("source", "must be synthetic or dataset");
        if (kind == TaskKind::classification) {
            if (num_classes < 2) throw ConfigError("num_classes", "must be at least 2");
            if (support_per_class < 1) throw ConfigError("support_per_class", "must be at least 1");
            if (eval_per_class < 1) throw ConfigError("eval_per_class", "must be at least 1");
            if (feature_dim < 1) throw ConfigError("feature_dim", "must be at least 1");
            if (!(sigma_cluster >= 0)) throw ConfigError("sigma_cluster", "must be non-negative");
        } else {
            if (support_size < 1) throw ConfigError("support_size", "must be at least 1");
            if (eval_size < 1) throw ConfigError("eval_size", "must be at least 1");
            if (!(rating_noise >= 0)) throw ConfigError("rating_noise", "must be non-negative");
            if (source == "synthetic" && num_movies < support_size + eval_size)
                throw ConfigError("num_movies", "must cover support_size + eval_size");
            if (!(scale.max > scale.min) || !(scale.step > 0)) throw ConfigError("rating_scale", "invalid scale");
        }
        if (budget < 1) throw ConfigError("budget", "must be at least 1");
        if (budget > support_count()) throw ConfigError("budget", "exceeds the support set size");
    }
};

struct Episode {
    TaskSpec spec;
    std::uint64_t seed = 0;
    std::vector<Item> support;
    std::vector<Item> eval;
};

}  // namespace mal
