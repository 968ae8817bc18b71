#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "mal/baselines/heuristics.hpp"
#include "mal/core/autodiff.hpp"
#include "mal/core/rng.hpp"
#include "mal/episodes/task.hpp"
#include "mal/model/runner.hpp"

namespace mal {

struct StepRecord {
    std::vector<std::size_t> known_before;  // partition snapshot before the query
    std::size_t chosen = 0;
    double log_prob = 0;     // active policy only
    double entropy = 0;      // active policy only
    double value = 0;        // V at the decision state, active policy only
    double fast_reward = 0;  // mean over the items still unknown after the query
    std::size_t unique_classes = 0;
    std::optional<PredictionScore> fast_score;
    std::optional<PredictionScore> slow_score;  // filled when slow predictions run every step
};

struct Rollout {
    std::uint64_t seed = 0;
    std::vector<StepRecord> steps;
    double slow_reward = 0;
    PredictionScore slow_score;

    // Per-step reward stream: fast reward each step plus the slow reward at the last step.
    std::vector<double> rewards() const {
        std::vector<double> r;
        for (const auto& s : steps) r.push_back(s.fast_reward);
        if (!r.empty()) r.back() += slow_reward;
        return r;
    }
    std::vector<double> values() const {
        std::vector<double> v;
        for (const auto& s : steps) v.push_back(s.value);
        return v;
    }
    double total_reward() const {
        double t = slow_reward;
        for (const auto& s : steps) t += s.fast_reward;
        return t;
    }
};

template <typename T>
struct RolloutGraph {
    Rollout record;
    std::vector<ad::Var<T>> log_probs;     // chosen-action log-probability per step
    std::vector<ad::Var<T>> entropies;
    std::vector<ad::Var<T>> values;
    std::vector<ad::Var<T>> fast_rewards;  // invalid where the pool was already empty
    std::vector<ad::Var<T>> distributions; // full log-probability column per step
    std::vector<std::vector<std::size_t>> candidates;
    ad::Var<T> slow_reward;
};

struct UnrollOptions {
    PolicyKind policy = PolicyKind::active;
    SelectMode mode = SelectMode::sample;
    Rng* rng = nullptr;                         // sampling and randomized heuristics
    std::vector<std::size_t> forced_actions;    // replay a fixed action sequence
    const PopularityScores* popularity = nullptr;
    MinMaxCosReference min_max_ref = MinMaxCosReference::known;
    bool slow_every_step = false;               // anytime evaluation
    bool rewards = true;                        // build reward terms
    bool detach_critic = true;                  // value head reads a constant copy of h
};

inline std::vector<Label> labels_of(const std::vector<Item>& items, const std::vector<std::size_t>& idx) {
    std::vector<Label> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(items.at(i).label);
    return out;
}

inline std::vector<Label> labels_of(const std::vector<Item>& items) {
    std::vector<Label> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.label);
    return out;
}

// Entropy used by the entropy-sampling heuristic, aligned with prediction rows:
// class-distribution entropy, or attention entropy for ratings.
template <typename T>
std::vector<double> prediction_entropies(const FastPrediction<T>& fp, TaskKind kind) {
    const Tensor<T>& src = kind == TaskKind::classification ? fp.prediction.value() : fp.attention.value();
    std::vector<double> out(src.rows());
    std::vector<double> row;
    for (std::size_t i = 0; i < src.rows(); ++i) {
        row.assign(src.row_span(i).begin(), src.row_span(i).end());
        out[i] = shannon_entropy(row);
    }
    return out;
}

// The end-to-end loop: T rounds of select, read, controller update and fast
// prediction, then slow prediction on the evaluation set.
template <typename T>
RolloutGraph<T> unroll(const Model<T>& model, ad::Tape<T>& tape, const Episode& ep, const UnrollOptions& opt) {
    const auto& spec = ep.spec;
    const auto& cfg = model.config();
    const std::size_t T_budget = spec.budget;
    MAL_REQUIRE(T_budget <= ep.support.size(), "unroll: budget exceeds the support set");
    MAL_REQUIRE(opt.forced_actions.empty() || opt.forced_actions.size() == T_budget,
                "unroll: forced action list must cover every step");

    RolloutGraph<T> g;
    g.record.seed = ep.seed;
    ActiveRun<T> run(model, tape, ep.support, ep.eval, ep.seed);
    const auto support_labels = labels_of(ep.support);
    const auto eval_labels = labels_of(ep.eval);
    std::optional<std::vector<double>> entropies;  // from the latest fast prediction
    std::set<int> classes_seen;

    for (std::size_t t = 0; t < T_budget; ++t) {
        StepRecord rec;
        rec.known_before = run.partition().known();
        std::optional<std::size_t> forced;
        if (!opt.forced_actions.empty()) forced = opt.forced_actions[t];

        if (opt.policy == PolicyKind::active) {
            auto v = run.value(opt.detach_critic);
            auto sel = run.select(opt.mode, opt.rng, forced);
            rec.chosen = sel.index;
            rec.log_prob = static_cast<double>(sel.log_prob.value().item());
            rec.entropy = static_cast<double>(sel.entropy.value().item());
            rec.value = static_cast<double>(v.value().item());
            g.log_probs.push_back(sel.log_prob);
            g.entropies.push_back(sel.entropy);
            g.values.push_back(v);
            g.distributions.push_back(sel.log_probs);
            g.candidates.push_back(sel.candidates);
        } else if (forced) {
            rec.chosen = *forced;
        } else {
            const auto& part = run.partition();
            switch (opt.policy) {
                case PolicyKind::random:
                    MAL_REQUIRE(opt.rng, "random policy needs an rng");
                    rec.chosen = select_random(part, *opt.rng);
                    break;
                case PolicyKind::balanced:
                    MAL_REQUIRE(opt.rng, "balanced policy needs an rng");
                    rec.chosen = select_balanced_oracle(part, support_labels, spec.kind, cfg.num_classes, *opt.rng);
                    break;
                case PolicyKind::min_max_cos:
                    rec.chosen = select_min_max_cos(part, run.similarities().value(), opt.min_max_ref);
                    break;
                case PolicyKind::entropy:
                    MAL_REQUIRE(opt.rng, "entropy policy needs an rng");
                    rec.chosen = select_entropy(part, entropies, *opt.rng);
                    break;
                case PolicyKind::popular_entropy:
                    MAL_REQUIRE(opt.popularity, "popular_entropy policy needs a score table");
                    rec.chosen = select_popular_entropy(part, ep.support, *opt.popularity);
                    break;
                case PolicyKind::active: break;
            }
        }
        MAL_REQUIRE(run.partition().is_unknown(rec.chosen), "policy chose an already-labeled item");

        run.reveal(rec.chosen, ep.support[rec.chosen].label);
        if (spec.kind == TaskKind::classification) classes_seen.insert(ep.support[rec.chosen].label.cls);
        rec.unique_classes = classes_seen.size();

        ad::Var<T> fast_reward;
        auto fp = run.fast();
        if (!fp.empty()) {
            auto truths = labels_of(ep.support, fp.items);
            rec.fast_score = score_predictions(fp.prediction.value(), truths, spec.kind);
            if (opt.rewards) {
                fast_reward = prediction_reward(tape, fp.prediction, truths, spec.kind).mean;
                rec.fast_reward = static_cast<double>(fast_reward.value().item());
            }
            entropies = prediction_entropies(fp, spec.kind);
        } else {
            entropies.reset();
        }
        g.fast_rewards.push_back(fast_reward);

        if (opt.slow_every_step && t + 1 < T_budget && !ep.eval.empty())
            rec.slow_score = score_predictions(run.slow().prediction.value(), eval_labels, spec.kind);
        g.record.steps.push_back(std::move(rec));
    }

    if (!ep.eval.empty()) {
        auto sp = run.slow();
        g.record.slow_score = score_predictions(sp.prediction.value(), eval_labels, spec.kind);
        if (opt.rewards) {
            g.slow_reward = prediction_reward(tape, sp.prediction, eval_labels, spec.kind).mean;
            g.record.slow_reward = static_cast<double>(g.slow_reward.value().item());
        }
        if (opt.slow_every_step && !g.record.steps.empty()) g.record.steps.back().slow_score = g.record.slow_score;
    }
    return g;
}

}  // namespace mal
