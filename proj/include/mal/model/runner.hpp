#pragma once

// One live episode of the active learning loop: encodes the pool once, then
// alternates select -> reveal while keeping the control state and partition.
// Used by training unrolls, evaluation and interactive sessions alike, so all
// three walk the same computation.

#include <optional>
#include <vector>

#include "mal/core/autodiff.hpp"
#include "mal/model/encoders.hpp"
#include "mal/model/model.hpp"
#include "mal/model/policy.hpp"
#include "mal/model/predictors.hpp"

namespace mal {

template <typename T>
class ActiveRun {
public:
    // Only features/ids of the items are read; stored labels are ignored.
    ActiveRun(const Model<T>& model, ad::Tape<T>& tape, const std::vector<Item>& support,
              const std::vector<Item>& eval, std::uint64_t episode_seed)
        : model_(model), tape_(tape), partition_(support.size()) {
        MAL_REQUIRE(!support.empty(), "episode has an empty support set");
        const T eps = static_cast<T>(model.config().cos_eps);
        auto xprime = encode_context_free(tape, model, support);
        auto cs = encode_context_sensitive(tape, model, xprime, visitation_order(support.size(), episode_seed));
        embeddings_ = cs.embeddings;
        sim_ = ad::cosine_matrix(embeddings_, embeddings_, eps);
        if (!eval.empty()) eval_embeddings_ = encode_context_free(tape, model, eval);
        state_ = initial_control_state(tape, model, cs.final_state);
    }

    const SupportPartition& partition() const noexcept { return partition_; }
    const ControlState<T>& state() const noexcept { return state_; }
    ad::Var<T> embeddings() const noexcept { return embeddings_; }
    ad::Var<T> similarities() const noexcept { return sim_; }
    const std::vector<Label>& known_labels() const noexcept { return known_labels_; }
    std::size_t t() const noexcept { return partition_.t(); }

    // With `detached` the critic reads a constant copy of h: its regression
    // error then trains the value head only, never the shared trunk.
    ad::Var<T> value(bool detached = true) const {
        return model_.linear(tape_, model_.value_head, detached ? tape_.constant(state_.h.value()) : state_.h);
    }

    Selection<T> select(SelectMode mode, Rng* rng, std::optional<std::size_t> forced = std::nullopt) const {
        return select_item(tape_, model_, embeddings_, sim_, partition_, state_.h, mode, rng, forced);
    }

    // Reads the labeled item, steps the controller and moves the item to the known set.
    void reveal(std::size_t index, const Label& y) {
        MAL_REQUIRE(partition_.is_unknown(index), "reveal: item already labeled or out of range");
        check_label(model_.config(), y);
        auto r = read_item(tape_, model_, ad::gather_rows(embeddings_, {index}), y);
        state_ = controller_update(tape_, model_, state_, r);
        partition_.reveal(index);
        known_labels_.push_back(y);
    }

    FastPrediction<T> fast() const {
        return fast_predict(tape_, model_, embeddings_, sim_, partition_, label_matrix(), state_.h);
    }

    SlowPrediction<T> slow() const {
        MAL_REQUIRE(eval_embeddings_.valid(), "slow prediction needs evaluation items");
        return slow_predict(tape_, model_, eval_embeddings_, embeddings_, partition_, label_matrix(), state_.h);
    }

    Tensor<T> label_matrix() const { return prediction_label_matrix<T>(model_.config(), known_labels_); }

private:
    const Model<T>& model_;
    ad::Tape<T>& tape_;
    SupportPartition partition_;
    ad::Var<T> embeddings_;
    ad::Var<T> sim_;
    ad::Var<T> eval_embeddings_;
    ControlState<T> state_;
    std::vector<Label> known_labels_;
};

}  // namespace mal
