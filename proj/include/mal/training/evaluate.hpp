#pragma once

// Anytime evaluation: slow-prediction metric on E after every query, the
// fast metric on the remaining pool, and the unique-labels-queried curve.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "mal/baselines/heuristics.hpp"
#include "mal/core/rng.hpp"
#include "mal/episodes/generator.hpp"
#include "mal/model/model.hpp"
#include "mal/training/rollout.hpp"

namespace mal {

// Running mean and standard error of the mean.
struct Stat {
    std::size_t n = 0;
    double sum = 0, sum_sq = 0;

    void add(double x) {
        ++n;
        sum += x;
        sum_sq += x * x;
    }
    double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
    double se() const {
        if (n < 2) return 0.0;
        const double m = mean();
        const double var = (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
        return std::sqrt(std::max(0.0, var) / static_cast<double>(n));
    }
};

struct CurvePoint {
    std::size_t t = 0;
    Stat slow_metric;  // accuracy, or RMSE for ratings
    Stat slow_reward;  // mean log-likelihood, or -MSE
    Stat fast_metric;  // over the still-unlabeled pool; empty once the pool is exhausted
    Stat unique_labels;
};

struct EvalReport {
    PolicyKind policy = PolicyKind::active;
    TaskKind kind = TaskKind::classification;
    std::size_t episodes = 0;
    std::uint64_t seed = 0;
    std::vector<CurvePoint> curve;  // t = 1..T
    std::vector<Rollout> rollouts;  // kept when requested
};

struct EvalOptions {
    PolicyKind policy = PolicyKind::active;
    const PopularityScores* popularity = nullptr;
    MinMaxCosReference min_max_ref = MinMaxCosReference::known;
    bool keep_rollouts = false;
};

inline double metric_of(const PredictionScore& s, TaskKind kind) {
    return kind == TaskKind::classification ? s.accuracy : s.rmse;
}

// Rollout of one evaluation episode: argmax for the learned policy, heuristics
// draw from a stream derived from the episode seed.
template <typename T>
Rollout evaluate_episode(const Model<T>& model, const Episode& ep, const EvalOptions& eo) {
    Rng rng(derive_seed(ep.seed, 0x706f6c6963ULL));
    UnrollOptions opt;
    opt.policy = eo.policy;
    opt.mode = SelectMode::argmax;
    opt.rng = &rng;
    opt.popularity = eo.popularity;
    opt.min_max_ref = eo.min_max_ref;
    opt.slow_every_step = true;
    opt.rewards = false;
    ad::Tape<T> tape(false);
    return unroll(model, tape, ep, opt).record;
}

inline void accumulate_curve(std::vector<CurvePoint>& curve, const Rollout& r, TaskKind kind) {
    if (curve.size() < r.steps.size()) curve.resize(r.steps.size());
    for (std::size_t t = 0; t < r.steps.size(); ++t) {
        const auto& s = r.steps[t];
        auto& p = curve[t];
        p.t = t + 1;
        if (s.slow_score) {
            p.slow_metric.add(metric_of(*s.slow_score, kind));
            p.slow_reward.add(s.slow_score->mean_reward);
        }
        if (s.fast_score) p.fast_metric.add(metric_of(*s.fast_score, kind));
        p.unique_labels.add(static_cast<double>(s.unique_classes));
    }
}

// Episode i uses episode_seed(seed, i), the same stream sessions draw from.
template <typename T>
EvalReport evaluate(const Model<T>& model, const EpisodeSource& source, std::size_t episodes, std::uint64_t seed,
                    const EvalOptions& eo = {}) {
    MAL_REQUIRE(episodes >= 1, "evaluate: need at least one episode");
    EvalReport rep;
    rep.policy = eo.policy;
    rep.kind = source.spec().kind;
    rep.episodes = episodes;
    rep.seed = seed;
    for (std::size_t i = 0; i < episodes; ++i) {
        const Episode ep = source.generate(episode_seed(seed, i));
        auto r = evaluate_episode(model, ep, eo);
        accumulate_curve(rep.curve, r, rep.kind);
        if (eo.keep_rollouts) rep.rollouts.push_back(std::move(r));
    }
    return rep;
}

}  // namespace mal
