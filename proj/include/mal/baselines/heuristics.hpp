#pragma once

// Fixed selection policies used as comparison points. They share the model's
// embeddings and predictors so only the choice of item differs.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <algorithm>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mal/core/errors.hpp"
#include "mal/core/rng.hpp"
#include "mal/core/tensor.hpp"
#include "mal/model/policy.hpp"

namespace mal {

enum class PolicyKind { active, random, balanced, min_max_cos, entropy, popular_entropy };

inline const char* to_string(PolicyKind p) {
    switch (p) {
        case PolicyKind::active: return "active";
        case PolicyKind::random: return "random";
        case PolicyKind::balanced: return "balanced";
        case PolicyKind::min_max_cos: return "min_max_cos";
        case PolicyKind::entropy: return "entropy";
        case PolicyKind::popular_entropy: return "popular_entropy";
    }
    return "?";
}

inline PolicyKind parse_policy(const std::string& s) {
    for (auto p : {PolicyKind::active, PolicyKind::random, PolicyKind::balanced, PolicyKind::min_max_cos,
                   PolicyKind::entropy, PolicyKind::popular_entropy})
        if (s == to_string(p)) return p;
    throw ConfigError("policy", "unknown policy '" + s + "'");
}

inline std::size_t select_random(const SupportPartition& part, Rng& rng) {
    if (part.unknown().empty()) throw PoolExhausted();
    std::uniform_int_distribution<std::size_t> pick(0, part.unknown().size() - 1);
    return part.unknown()[pick(rng)];
}

// Uniform over unknown items of the class with the fewest revealed labels
// (classes with no unknown items left are skipped; ties uniform over classes).
inline std::size_t select_balanced_oracle(const SupportPartition& part, const std::vector<Label>& true_labels,
                                          TaskKind kind, std::size_t num_classes, Rng& rng) {
    if (kind != TaskKind::classification)
        throw ConfigError("policy", "balanced oracle is only defined for classification tasks");
    if (part.unknown().empty()) throw PoolExhausted();
    std::vector<std::size_t> revealed(num_classes, 0);
    std::vector<std::vector<std::size_t>> pending(num_classes);
    for (auto i : part.known()) ++revealed.at(static_cast<std::size_t>(true_labels.at(i).cls));
    for (auto i : part.unknown()) pending.at(static_cast<std::size_t>(true_labels.at(i).cls)).push_back(i);
    std::size_t fewest = std::numeric_limits<std::size_t>::max();
    for (std::size_t c = 0; c < num_classes; ++c)
        if (!pending[c].empty()) fewest = std::min(fewest, revealed[c]);
    std::vector<std::size_t> tied;
    for (std::size_t c = 0; c < num_classes; ++c)
        if (!pending[c].empty() && revealed[c] == fewest) tied.push_back(c);
    std::uniform_int_distribution<std::size_t> pick_class(0, tied.size() - 1);
    const auto& items = pending[tied[pick_class(rng)]];
    std::uniform_int_distribution<std::size_t> pick_item(0, items.size() - 1);
    return items[pick_item(rng)];
}

// Unknown items eligible under the balanced oracle (used as the imitation target).
inline std::vector<std::size_t> balanced_oracle_candidates(const SupportPartition& part,
                                                           const std::vector<Label>& true_labels,
                                                           std::size_t num_classes) {
    std::vector<std::size_t> revealed(num_classes, 0), pending(num_classes, 0);
    for (auto i : part.known()) ++revealed.at(static_cast<std::size_t>(true_labels.at(i).cls));
    for (auto i : part.unknown()) ++pending.at(static_cast<std::size_t>(true_labels.at(i).cls));
    std::size_t fewest = std::numeric_limits<std::size_t>::max();
    for (std::size_t c = 0; c < num_classes; ++c)
        if (pending[c] > 0) fewest = std::min(fewest, revealed[c]);
    std::vector<std::size_t> out;
    for (auto i : part.unknown()) {
        const auto c = static_cast<std::size_t>(true_labels[i].cls);
        if (revealed[c] == fewest) out.push_back(i);
    }
    return out;
}

// Expected distinct classes among t items drawn without replacement from a
// pool of `classes` classes with `per_class` items each.
inline double expected_unique_classes_random(std::size_t classes, std::size_t per_class, std::size_t t) {
    const std::size_t n = classes * per_class;
    MAL_REQUIRE(t <= n, "expected_unique_classes_random: t exceeds the pool");
    // P(class missed) = C(n - k, t) / C(n, t) = prod_{i<t} (n - k - i) / (n - i)
    double miss = 1.0;
    for (std::size_t i = 0; i < t; ++i) {
        if (i + per_class >= n) {
            miss = 0.0;
            break;
        }
        miss *= static_cast<double>(n - per_class - i) / static_cast<double>(n - i);
    }
    return static_cast<double>(classes) * (1.0 - miss);
}

enum class MinMaxCosReference { known, unlabeled };

// argmin over unknown i of max_j cos(x''_i, x''_j), j over the known set
// (or the other unknown items when nothing is known yet, or always under the
// `unlabeled` variant). Lowest index wins ties.
template <typename T>
std::size_t select_min_max_cos(const SupportPartition& part, const Tensor<T>& sim,
                               MinMaxCosReference ref = MinMaxCosReference::known) {
    if (part.unknown().empty()) throw PoolExhausted();
    const bool use_known = ref == MinMaxCosReference::known && !part.known().empty();
    const auto& peers = use_known ? part.known() : part.unknown();
    std::size_t best = part.unknown().front();
    T best_score = std::numeric_limits<T>::infinity();
    for (auto i : part.unknown()) {
        T mx = -std::numeric_limits<T>::infinity();
        bool any = false;
        for (auto j : peers) {
            if (j == i) continue;
            mx = std::max(mx, sim(i, j));
            any = true;
        }
        if (!any) mx = T(0);
        if (mx < best_score) {
            best_score = mx;
            best = i;
        }
    }
    return best;
}

inline double shannon_entropy(std::span<const double> p) {
    double h = 0;
    for (double v : p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

// Samples an unknown item with probability proportional to `entropies` (aligned
// with part.unknown()). Falls back to uniform when no entropies are available
// or all are zero.
inline std::size_t select_entropy(const SupportPartition& part, const std::optional<std::vector<double>>& entropies,
                                  Rng& rng) {
    if (part.unknown().empty()) throw PoolExhausted();
    if (!entropies) return select_random(part, rng);
    MAL_REQUIRE(entropies->size() == part.unknown().size(), "select_entropy: one entropy per unknown item");
    double total = 0;
    for (double h : *entropies) total += std::max(0.0, h);
    if (!(total > 0)) return select_random(part, rng);
    const double u = std::generate_canonical<double, 53>(rng) * total;
    double acc = 0;
    std::size_t last_positive = 0;
    for (std::size_t k = 0; k < entropies->size(); ++k) {
        const double h = std::max(0.0, (*entropies)[k]);
        if (h > 0) last_positive = k;
        acc += h;
        if (u < acc && h > 0) return part.unknown()[k];
    }
    return part.unknown()[last_positive];
}

// A-priori per-item scores: log(count) * entropy of the item's rating histogram.
struct PopularityScores {
    std::unordered_map<std::int64_t, double> score;

    double at(std::int64_t id) const {
        auto it = score.find(id);
        if (it == score.end()) throw MissingScore(id);
        return it->second;
    }
};

inline PopularityScores popularity_entropy_scores(const std::vector<RatingRecord>& ratings, const RatingScale& scale) {
    std::map<std::int64_t, std::vector<double>> hist;
    for (const auto& r : ratings) {
        auto& h = hist[r.item];
        if (h.empty()) h.assign(scale.levels(), 0.0);
        h[std::min(scale.level_of(scale.quantize(r.rating)), h.size() - 1)] += 1.0;
    }
    PopularityScores out;
    for (auto& [id, h] : hist) {
        double n = 0;
        for (double c : h) n += c;
        for (double& c : h) c /= n;
        out.score[id] = std::log(n) * shannon_entropy(h);
    }
    return out;
}

// Highest a-priori score among unknown items; lowest index wins ties.
inline std::size_t select_popular_entropy(const SupportPartition& part, const std::vector<Item>& support,
                                          const PopularityScores& scores) {
    if (part.unknown().empty()) throw PoolExhausted();
    std::size_t best = part.unknown().front();
    double best_score = -std::numeric_limits<double>::infinity();
    for (auto i : part.unknown()) {
        const double s = scores.at(support.at(i).id);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

}  // namespace mal
