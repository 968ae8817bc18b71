#pragma once

// Meta-training: score-function term with GAE advantages, pathwise reward
// terms through the predictors, a value regression and an entropy bonus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mal/baselines/heuristics.hpp"
#include "mal/core/adam.hpp"
#include "mal/core/autodiff.hpp"
#include "mal/core/errors.hpp"
#include "mal/core/rng.hpp"
#include "mal/episodes/generator.hpp"
#include "mal/model/model.hpp"
#include "mal/training/gae.hpp"
#include "mal/training/rollout.hpp"

namespace mal {

struct TrainConfig {
    double lr = 1e-3;
    double gae_gamma = 1.0;
    double gae_lambda = 0.95;
    double value_weight = 0.5;
    double entropy_weight = 0.01;
    std::size_t batch = 16;
    std::size_t max_updates = 1000;
    std::uint64_t seed = 1;
    // Fixed heuristics train only the predictors and encoders (pathwise terms).
    PolicyKind policy = PolicyKind::active;
    bool pathwise = true;
    bool policy_gradient = true;
    std::size_t imitation_steps = 0;  // balanced-oracle imitation before RL; off by default
    bool normalize_advantages = true;  // per-batch standardization of GAE advantages
    bool detach_critic = true;         // value loss trains the value head only

    void validate() const {
        if (!(lr > 0)) throw ConfigError("lr", "must be positive");
        if (!(gae_gamma >= 0 && gae_gamma <= 1)) throw ConfigError("gae_gamma", "must lie in [0, 1]");
        if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw ConfigError("gae_lambda", "must lie in [0, 1]");
        if (!(value_weight >= 0)) throw ConfigError("value_weight", "must be non-negative");
        if (!(entropy_weight >= 0)) throw ConfigError("entropy_weight", "must be non-negative");
        if (batch < 1) throw ConfigError("batch", "must be at least 1");
        if (policy == PolicyKind::popular_entropy) throw ConfigError("policy", "popular_entropy is evaluation-only");
    }
};

// Seeds of training episodes never collide with evaluation seeds (episode_seed).
inline std::uint64_t train_episode_seed(std::uint64_t run_seed, std::size_t update, std::size_t slot) {
    return derive_seed(run_seed, 0x747261696eULL, update * 0x10000ULL + slot);
}

inline std::uint64_t sampling_seed(std::uint64_t episode_seed) { return derive_seed(episode_seed, 0x73616d70ULL); }

template <typename T>
struct EpisodeLoss {
    ad::Var<T> loss;
    RolloutGraph<T> graph;
    Advantages adv;
    double policy_term = 0, value_term = 0, entropy_term = 0, reward_term = 0;
};

// Loss of an unrolled episode given advantages and value targets (constants).
template <typename T>
EpisodeLoss<T> assemble_loss(ad::Tape<T>& tape, RolloutGraph<T> graph, Advantages adv, const TrainConfig& cfg,
                             bool active) {
    EpisodeLoss<T> out;
    out.graph = std::move(graph);
    out.adv = std::move(adv);
    auto& g = out.graph;
    std::vector<ad::Var<T>> terms;
    if (cfg.pathwise) {
        std::vector<ad::Var<T>> rewards;
        for (const auto& r : g.fast_rewards)
            if (r.valid()) rewards.push_back(r);
        if (g.slow_reward.valid()) rewards.push_back(g.slow_reward);
        if (!rewards.empty()) {
            auto total = ad::sum(ad::concat_rows(rewards));
            out.reward_term = static_cast<double>(total.value().item());
            terms.push_back(ad::neg(total));
        }
    }
    if (active && cfg.policy_gradient) {
        const std::size_t n = g.log_probs.size();
        MAL_REQUIRE(out.adv.advantage.size() == n && out.adv.target.size() == n,
                    "episode loss: advantage count differs from step count");
        Tensor<T> a(n, 1), target(n, 1);
        for (std::size_t t = 0; t < n; ++t) {
            a[t] = static_cast<T>(out.adv.advantage[t]);
            target[t] = static_cast<T>(out.adv.target[t]);
        }
        auto lp = ad::concat_rows(g.log_probs);
        auto pg = ad::neg(ad::sum(ad::mul(lp, tape.constant(a))));
        auto verr = ad::sub(ad::concat_rows(g.values), tape.constant(target));
        auto vloss = ad::scale(ad::sum(ad::square(verr)), static_cast<T>(cfg.value_weight));
        auto ent = ad::scale(ad::sum(ad::concat_rows(g.entropies)), static_cast<T>(-cfg.entropy_weight));
        out.policy_term = static_cast<double>(pg.value().item());
        out.value_term = static_cast<double>(vloss.value().item());
        out.entropy_term = static_cast<double>(ent.value().item());
        terms.push_back(pg);
        terms.push_back(vloss);
        terms.push_back(ent);
    }
    MAL_REQUIRE(!terms.empty(), "episode loss: no terms enabled");
    out.loss = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) out.loss = ad::add(out.loss, terms[k]);
    return out;
}

// Per-episode objective with unnormalized GAE advantages; pass `fixed` to pin
// advantages and targets (finite-difference checks pin the actions too).
template <typename T>
EpisodeLoss<T> episode_loss(const Model<T>& model, ad::Tape<T>& tape, const Episode& ep, const TrainConfig& cfg,
                            const UnrollOptions& opt, const Advantages* fixed = nullptr) {
    auto g = unroll(model, tape, ep, opt);
    auto adv = fixed ? *fixed : compute_gae(g.record.rewards(), g.record.values(), cfg.gae_gamma, cfg.gae_lambda);
    return assemble_loss(tape, std::move(g), std::move(adv), cfg, opt.policy == PolicyKind::active);
}

// Rescales advantages over every step of the batch to zero mean, unit spread.
inline void normalize_advantages(std::vector<Advantages>& batch) {
    double n = 0, sum = 0, sq = 0;
    for (const auto& a : batch)
        for (double x : a.advantage) {
            n += 1;
            sum += x;
            sq += x * x;
        }
    if (n < 2) return;
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
    for (auto& a : batch)
        for (double& x : a.advantage) x = (x - mean) / (sd + 1e-8);
}

struct StepMetrics {
    std::size_t update = 0;
    double loss = 0;
    double policy_loss = 0;
    double value_loss = 0;
    double entropy = 0;  // mean per-step policy entropy
    double mean_fast_reward = 0;
    double mean_slow_reward = 0;
    double mean_total_reward = 0;  // sum of fast rewards plus slow reward
    double slow_metric = 0;        // accuracy or RMSE on E at t = T
    bool skipped = false;
    std::string fault;
};

// One Adam update on the batch mean of episode losses.
template <typename T>
StepMetrics training_step(Model<T>& model, AdamState<T>& adam, const EpisodeSource& source,
                          const std::vector<std::uint64_t>& seeds, const TrainConfig& cfg, std::size_t update = 0) {
    MAL_REQUIRE(!seeds.empty(), "training_step: empty batch");
    adam.hyper.lr = cfg.lr;
    StepMetrics m;
    m.update = update;
    auto grads = model.params().zeros_like();
    const T w = static_cast<T>(1.0 / static_cast<double>(seeds.size()));
    const double inv = 1.0 / static_cast<double>(seeds.size());
    const bool regression = source.spec().kind == TaskKind::regression;
    try {
        // Unroll the whole batch first so advantages can be standardized jointly.
        std::vector<std::unique_ptr<ad::Tape<T>>> tapes;
        std::vector<RolloutGraph<T>> graphs;
        std::vector<Advantages> advs;
        for (auto seed : seeds) {
            const Episode ep = source.generate(seed);
            Rng rng(sampling_seed(seed));
            UnrollOptions opt;
            opt.policy = cfg.policy;
            opt.mode = SelectMode::sample;
            opt.rng = &rng;
            opt.detach_critic = cfg.detach_critic;
            tapes.push_back(std::make_unique<ad::Tape<T>>());
            graphs.push_back(unroll(model, *tapes.back(), ep, opt));
            const auto& rec = graphs.back().record;
            advs.push_back(compute_gae(rec.rewards(), rec.values(), cfg.gae_gamma, cfg.gae_lambda));
        }
        if (cfg.normalize_advantages && cfg.policy == PolicyKind::active) normalize_advantages(advs);

        for (std::size_t b = 0; b < seeds.size(); ++b) {
            // value targets stay in reward units
            Advantages adv = advs[b];
            const auto raw = compute_gae(graphs[b].record.rewards(), graphs[b].record.values(), cfg.gae_gamma,
                                         cfg.gae_lambda);
            adv.target = raw.target;
            auto el = assemble_loss(*tapes[b], std::move(graphs[b]), std::move(adv), cfg,
                                    cfg.policy == PolicyKind::active);
            tapes[b]->backward(el.loss);
            tapes[b]->accumulate_parameter_gradients(model.params(), grads, w);

            const auto& rec = el.graph.record;
            double fast = 0, ent = 0;
            for (const auto& s : rec.steps) {
                fast += s.fast_reward;
                ent += s.entropy;
            }
            const double steps = static_cast<double>(std::max<std::size_t>(1, rec.steps.size()));
            m.loss += inv * static_cast<double>(el.loss.value().item());
            m.policy_loss += inv * el.policy_term;
            m.value_loss += inv * el.value_term;
            m.entropy += inv * ent / steps;
            m.mean_fast_reward += inv * fast / steps;
            m.mean_slow_reward += inv * rec.slow_reward;
            m.mean_total_reward += inv * rec.total_reward();
            m.slow_metric += inv * (regression ? rec.slow_score.rmse : rec.slow_score.accuracy);
            tapes[b].reset();
        }
        if (!std::isfinite(m.loss)) throw NumericFault("loss", "non-finite batch loss");
        adam_step(model.params(), grads, adam);
    } catch (const NumericFault& e) {
        m.skipped = true;
        m.fault = e.what();
    }
    return m;
}

inline std::vector<std::uint64_t> batch_seeds(const TrainConfig& cfg, std::size_t update) {
    std::vector<std::uint64_t> seeds(cfg.batch);
    for (std::size_t b = 0; b < cfg.batch; ++b) seeds[b] = train_episode_seed(cfg.seed, update, b);
    return seeds;
}

// Balanced-oracle action sequence for an episode (classification only).
inline std::vector<std::size_t> balanced_actions(const Episode& ep, Rng& rng) {
    const auto truth = labels_of(ep.support);
    SupportPartition part(ep.support.size());
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < ep.spec.budget; ++t) {
        out.push_back(select_balanced_oracle(part, truth, ep.spec.kind, ep.spec.num_classes, rng));
        part.reveal(out.back());
    }
    return out;
}

// Teacher-forced warm start: the episode follows the balanced oracle, the
// selection distribution is fit by cross-entropy against a uniform target over
// the oracle's eligible items, and the pathwise reward terms train the
// predictors along the same trajectory. Returns the batch-mean imitation
// cross-entropy (NaN when the update was skipped).
template <typename T>
double imitation_step(Model<T>& model, AdamState<T>& adam, const EpisodeSource& source,
                      const std::vector<std::uint64_t>& seeds, const TrainConfig& cfg) {
    if (source.spec().kind != TaskKind::classification)
        throw ConfigError("imitation_steps", "the balanced oracle is only defined for classification");
    MAL_REQUIRE(!seeds.empty(), "imitation_step: empty batch");
    adam.hyper.lr = cfg.lr;
    auto grads = model.params().zeros_like();
    const T w = static_cast<T>(1.0 / static_cast<double>(seeds.size()));
    double total = 0;
    try {
        for (auto seed : seeds) {
            const Episode ep = source.generate(seed);
            Rng rng(sampling_seed(seed));
            ad::Tape<T> tape;
            UnrollOptions opt;
            opt.policy = PolicyKind::active;
            opt.forced_actions = balanced_actions(ep, rng);
            auto g = unroll(model, tape, ep, opt);
            const auto truth = labels_of(ep.support);
            SupportPartition part(ep.support.size());
            std::vector<ad::Var<T>> terms;
            for (std::size_t t = 0; t < g.distributions.size(); ++t) {
                const auto good = balanced_oracle_candidates(part, truth, ep.spec.num_classes);
                std::vector<std::pair<std::size_t, std::size_t>> at;
                for (std::size_t k = 0; k < g.candidates[t].size(); ++k)
                    if (std::find(good.begin(), good.end(), g.candidates[t][k]) != good.end()) at.emplace_back(k, 0);
                terms.push_back(ad::neg(ad::mean(ad::pick(g.distributions[t], std::move(at)))));
                part.reveal(opt.forced_actions[t]);
            }
            auto ce = ad::sum(ad::concat_rows(terms));
            total += static_cast<double>(ce.value().item()) / static_cast<double>(seeds.size());
            auto loss = ce;
            if (cfg.pathwise) {
                std::vector<ad::Var<T>> rewards;
                for (const auto& r : g.fast_rewards)
                    if (r.valid()) rewards.push_back(r);
                if (g.slow_reward.valid()) rewards.push_back(g.slow_reward);
                if (!rewards.empty()) loss = ad::sub(loss, ad::sum(ad::concat_rows(rewards)));
            }
            tape.backward(loss);
            tape.accumulate_parameter_gradients(model.params(), grads, w);
        }
        if (!std::isfinite(total)) throw NumericFault("loss", "non-finite imitation loss");
        adam_step(model.params(), grads, adam);
    } catch (const NumericFault&) {
        return std::nan("");
    }
    return total;
}

}  // namespace mal
