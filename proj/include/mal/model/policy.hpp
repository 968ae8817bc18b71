#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "mal/core/autodiff.hpp"
#include "mal/core/rng.hpp"
#include "mal/model/model.hpp"

namespace mal {

// Revealed (known) and hidden (unknown) support indices. `known` is in reveal
// order; `unknown` stays sorted ascending.
class SupportPartition {
public:
    SupportPartition() = default;
    explicit SupportPartition(std::size_t n) : unknown_(n) {
        for (std::size_t i = 0; i < n; ++i) unknown_[i] = i;
    }

    const std::vector<std::size_t>& known() const noexcept { return known_; }
    const std::vector<std::size_t>& unknown() const noexcept { return unknown_; }
    std::size_t size() const noexcept { return known_.size() + unknown_.size(); }
    std::size_t t() const noexcept { return known_.size(); }

    bool is_known(std::size_t i) const { return std::find(known_.begin(), known_.end(), i) != known_.end(); }
    bool is_unknown(std::size_t i) const { return std::binary_search(unknown_.begin(), unknown_.end(), i); }

    void reveal(std::size_t i) {
        auto it = std::lower_bound(unknown_.begin(), unknown_.end(), i);
        MAL_REQUIRE(it != unknown_.end() && *it == i, "reveal: index is not in the unknown set");
        unknown_.erase(it);
        known_.push_back(i);
    }

private:
    std::vector<std::size_t> known_;
    std::vector<std::size_t> unknown_;
};

template <typename T>
struct ControlState {
    ad::Var<T> h;
    ad::Var<T> c;
};

enum class SelectMode { sample, argmax };

template <typename T>
struct Selection {
    std::size_t index = 0;           // chosen support index
    std::size_t position = 0;        // its position in `candidates`
    std::vector<std::size_t> candidates;  // the unknown set at selection time
    ad::Var<T> log_probs;            // (m x 1)
    ad::Var<T> log_prob;             // (1 x 1)
    ad::Var<T> entropy;              // (1 x 1)
    Tensor<T> probabilities;         // (m x 1)
    Tensor<T> gate;                  // g_t (1 x d+6)
    Tensor<T> features;              // d_t per candidate (m x d+6)
};

inline void check_label(const ModelConfig& cfg, const Label& y) {
    if (cfg.task == TaskKind::classification) {
        MAL_REQUIRE(y.cls >= 0 && static_cast<std::size_t>(y.cls) < cfg.num_classes, "label class index out of range");
    } else {
        MAL_REQUIRE(std::isfinite(y.rating) && y.rating >= cfg.scale.min - 1e-9 && y.rating <= cfg.scale.max + 1e-9,
                    "rating outside the task scale");
    }
}

// Label as fed to the read module: one-hot, or rating mapped affinely onto [-1, 1].
template <typename T>
Tensor<T> read_label_encoding(const ModelConfig& cfg, const Label& y) {
    check_label(cfg, y);
    Tensor<T> e(1, cfg.label_dim());
    if (cfg.task == TaskKind::classification)
        e[static_cast<std::size_t>(y.cls)] = T(1);
    else
        e[0] = static_cast<T>(cfg.scale.encode(y.rating));
    return e;
}

// Label as averaged by the predictors: one-hot, or the raw rating.
template <typename T>
Tensor<T> prediction_label_matrix(const ModelConfig& cfg, const std::vector<Label>& labels) {
    Tensor<T> y(labels.size(), cfg.label_dim());
    for (std::size_t k = 0; k < labels.size(); ++k) {
        check_label(cfg, labels[k]);
        if (cfg.task == TaskKind::classification)
            y(k, static_cast<std::size_t>(labels[k].cls)) = T(1);
        else
            y(k, 0) = static_cast<T>(labels[k].rating);
    }
    return y;
}

template <typename T>
ad::Var<T> read_item(ad::Tape<T>& tape, const Model<T>& m, ad::Var<T> embedding_row, const Label& y) {
    auto enc = tape.constant(read_label_encoding<T>(m.config(), y));
    return m.linear(tape, m.read, ad::concat_cols<T>({embedding_row, enc}));
}

template <typename T>
ControlState<T> initial_control_state(ad::Tape<T>& tape, const Model<T>& m, ad::Var<T> encoder_final_state) {
    return {m.linear(tape, m.h0_map, encoder_final_state), m.zeros(tape, 1, m.config().ctrl_hidden)};
}

template <typename T>
ControlState<T> controller_update(ad::Tape<T>& tape, const Model<T>& m, const ControlState<T>& s, ad::Var<T> r) {
    auto [h, c] = m.lstm(tape, m.ctrl, s.h, s.c, r);
    return {h, c};
}

// [max, mean, min] cosine to known items, then [max, mean, min] cosine to the
// other unknown items; empty sides are zero.
template <typename T>
ad::Var<T> item_item_features(ad::Var<T> sim, const std::vector<std::size_t>& items, const SupportPartition& part) {
    return ad::concat_cols<T>(
        {ad::masked_row_stats(sim, items, part.known()), ad::masked_row_stats(sim, items, part.unknown())});
}

// Index of the largest entry; ties go to the lowest position.
template <typename T>
std::size_t argmax_position(const Tensor<T>& column) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < column.size(); ++k)
        if (column[k] > column[best]) best = k;
    return best;
}

template <typename T>
std::size_t sample_position(const Tensor<T>& probs, Rng& rng) {
    const double u = std::generate_canonical<double, 53>(rng);
    double acc = 0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        acc += static_cast<double>(probs[k]);
        if (u < acc) return k;
    }
    for (std::size_t k = probs.size(); k-- > 0;)
        if (probs[k] > T(0)) return k;
    return probs.size() - 1;
}

// Selection distribution over the unknown set: logits (g ⊙ d_i)ᵀ w_p with
// d_i = [x''_i ⊙ W_b h ; item-item features].
template <typename T>
Selection<T> select_item(ad::Tape<T>& tape, const Model<T>& m, ad::Var<T> embeddings, ad::Var<T> sim,
                         const SupportPartition& part, ad::Var<T> h, SelectMode mode, Rng* rng,
                         std::optional<std::size_t> forced = std::nullopt) {
    if (part.unknown().empty()) throw PoolExhausted();
    Selection<T> s;
    s.candidates = part.unknown();
    auto x = ad::gather_rows(embeddings, s.candidates);
    auto controller_item = ad::mul(x, m.linear(tape, m.sel_b, h));
    auto feats = ad::concat_cols<T>({controller_item, item_item_features(sim, s.candidates, part)});
    auto gate = ad::sigmoid(m.linear(tape, m.sel_g, h));
    auto logits = ad::matmul_nt(ad::mul(feats, gate), tape.param(m.params(), m.sel_w));  // (m x 1)
    s.log_probs = ad::transpose(ad::log_softmax_rows(ad::transpose(logits)));
    Tensor<T> probs(s.candidates.size(), 1);
    for (std::size_t k = 0; k < probs.size(); ++k) probs[k] = std::exp(s.log_probs.value()[k]);
    s.probabilities = probs;
    s.entropy = ad::neg(ad::sum(ad::mul(ad::exp(s.log_probs), s.log_probs)));
    s.gate = gate.value();
    s.features = feats.value();

    if (forced) {
        auto it = std::find(s.candidates.begin(), s.candidates.end(), *forced);
        MAL_REQUIRE(it != s.candidates.end(), "select: forced action is not in the unknown set");
        s.position = static_cast<std::size_t>(it - s.candidates.begin());
    } else if (mode == SelectMode::argmax) {
        s.position = argmax_position(s.log_probs.value());
    } else {
        MAL_REQUIRE(rng != nullptr, "select: sampling needs an rng");
        s.position = sample_position(probs, *rng);
    }
    s.index = s.candidates[s.position];
    s.log_prob = ad::pick(s.log_probs, {{s.position, 0}});
    return s;
}

}  // namespace mal
