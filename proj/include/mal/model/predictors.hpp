#pragma once

#include <cmath>
#include <vector>

#include "mal/core/autodiff.hpp"
#include "mal/model/model.hpp"
#include "mal/model/policy.hpp"

namespace mal {

template <typename T>
struct FastPrediction {
    std::vector<std::size_t> items;  // unknown support indices, one row each
    ad::Var<T> prediction;           // (m x label_dim)
    ad::Var<T> attention;            // (m x |known|)
    Tensor<T> gamma;                 // sharpening per row (m x 1)
    bool empty() const { return items.empty(); }
};

template <typename T>
struct SlowPrediction {
    ad::Var<T> prediction;  // (|E| x label_dim)
    ad::Var<T> attention;   // final-step attention over known items (|E| x |known|)
};

// Attention of each unknown item over the known items, softmax(gamma_i * cos(x''_i, x''_j)),
// with gamma_i = exp(x''_iᵀ W_gamma h). Returns an empty result when nothing is left unknown.
template <typename T>
FastPrediction<T> fast_predict(ad::Tape<T>& tape, const Model<T>& m, ad::Var<T> embeddings, ad::Var<T> sim,
                               const SupportPartition& part, const Tensor<T>& known_labels, ad::Var<T> h) {
    if (part.known().empty()) throw NoEvidence();
    MAL_REQUIRE(known_labels.rows() == part.known().size(), "fast_predict: one label row per known item");
    FastPrediction<T> out;
    out.items = part.unknown();
    if (out.items.empty()) return out;
    auto cos = ad::gather_block(sim, out.items, part.known());
    ad::Var<T> logits = cos;
    if (m.config().use_gamma) {
        const T clip = static_cast<T>(m.config().gamma_log_clip);
        auto score = ad::row_dot(ad::gather_rows(embeddings, out.items), m.linear(tape, m.gamma, h));
        auto gamma = ad::exp(ad::clamp(score, -clip, clip));
        out.gamma = gamma.value();
        logits = ad::mul(cos, gamma);
    } else {
        out.gamma = Tensor<T>(out.items.size(), 1, T(1));
    }
    out.attention = ad::softmax_rows(logits);
    out.prediction = ad::matmul(out.attention, tape.constant(known_labels));
    return out;
}

// Iterative matching over the known items for held-out inputs (context-free embeddings).
template <typename T>
SlowPrediction<T> slow_predict(ad::Tape<T>& tape, const Model<T>& m, ad::Var<T> eval_embeddings,
                               ad::Var<T> support_embeddings, const SupportPartition& part,
                               const Tensor<T>& known_labels, ad::Var<T> h) {
    if (part.known().empty()) throw NoEvidence();
    const auto& cfg = m.config();
    MAL_REQUIRE(known_labels.rows() == part.known().size(), "slow_predict: one label row per known item");
    MAL_REQUIRE(cfg.matching_steps >= 1, "slow_predict: K must be at least 1");
    const std::size_t e = eval_embeddings.rows();
    const T eps = static_cast<T>(cfg.cos_eps);

    auto known = ad::gather_rows(support_embeddings, part.known());
    auto labels = tape.constant(known_labels);
    auto h_rows = ad::matmul(tape.constant(Tensor<T>(e, 1, T(1))), h);

    auto state = m.zeros(tape, e, cfg.match_hidden);
    auto memory = m.zeros(tape, e, cfg.match_hidden);
    auto item_read = m.zeros(tape, e, cfg.embed_dim);
    SlowPrediction<T> out;
    for (std::size_t k = 0; k < cfg.matching_steps; ++k) {
        std::tie(state, memory) =
            m.lstm(tape, m.match, state, memory, ad::concat_cols<T>({item_read, eval_embeddings, h_rows}));
        auto query = ad::add(eval_embeddings, m.linear(tape, m.match_out, state));
        out.attention = ad::softmax_rows(ad::cosine_matrix(query, known, eps));
        item_read = ad::matmul(out.attention, known);
        out.prediction = ad::matmul(out.attention, labels);
    }
    return out;
}

template <typename T>
struct RewardTerms {
    ad::Var<T> per_item;  // (m x 1)
    ad::Var<T> mean;      // (1 x 1)
};

inline constexpr double kLogFloor = 1e-12;

// Classification: log p(truth) floored at log(1e-12). Regression: -(ŷ - y)².
template <typename T>
RewardTerms<T> prediction_reward(ad::Tape<T>& tape, ad::Var<T> prediction, const std::vector<Label>& truths,
                                 TaskKind kind) {
    MAL_REQUIRE(prediction.rows() == truths.size(), "reward: predictions and truths have different lengths");
    MAL_REQUIRE(!truths.empty(), "reward: nothing to score");
    RewardTerms<T> r;
    if (kind == TaskKind::classification) {
        std::vector<std::pair<std::size_t, std::size_t>> at;
        for (std::size_t i = 0; i < truths.size(); ++i) {
            MAL_REQUIRE(truths[i].cls >= 0 && static_cast<std::size_t>(truths[i].cls) < prediction.cols(),
                        "reward: class index out of range");
            at.emplace_back(i, static_cast<std::size_t>(truths[i].cls));
        }
        r.per_item = ad::log_clipped(ad::pick(prediction, std::move(at)), static_cast<T>(kLogFloor));
    } else {
        Tensor<T> y(truths.size(), 1);
        for (std::size_t i = 0; i < truths.size(); ++i) y[i] = static_cast<T>(truths[i].rating);
        r.per_item = ad::neg(ad::square(ad::sub(prediction, tape.constant(std::move(y)))));
    }
    r.mean = ad::mean(r.per_item);
    return r;
}

// Plain-value scoring for evaluation curves.
struct PredictionScore {
    double mean_reward = 0;  // mean log-likelihood, or -MSE
    double accuracy = 0;     // classification only
    double rmse = 0;         // regression only
    std::size_t count = 0;
};

template <typename T>
PredictionScore score_predictions(const Tensor<T>& prediction, const std::vector<Label>& truths, TaskKind kind) {
    MAL_REQUIRE(prediction.rows() == truths.size(), "score: length mismatch");
    PredictionScore s;
    s.count = truths.size();
    if (truths.empty()) return s;
    double total = 0, hits = 0;
    for (std::size_t i = 0; i < truths.size(); ++i) {
        if (kind == TaskKind::classification) {
            const auto cls = static_cast<std::size_t>(truths[i].cls);
            MAL_REQUIRE(cls < prediction.cols(), "score: class index out of range");
            total += std::log(std::max(static_cast<double>(prediction(i, cls)), kLogFloor));
            std::size_t best = 0;
            for (std::size_t c = 1; c < prediction.cols(); ++c)
                if (prediction(i, c) > prediction(i, best)) best = c;
            hits += best == cls ? 1.0 : 0.0;
        } else {
            const double d = static_cast<double>(prediction(i, 0)) - truths[i].rating;
            total -= d * d;
        }
    }
    const double n = static_cast<double>(truths.size());
    s.mean_reward = total / n;
    s.accuracy = hits / n;
    s.rmse = std::sqrt(std::max(0.0, -s.mean_reward));
    if (kind == TaskKind::classification) s.rmse = 0;
    return s;
}

}  // namespace mal
