#pragma once

#include <memory>
#include <vector>

#include "mal/episodes/dataset.hpp"
#include "mal/episodes/synthetic.hpp"
#include "mal/episodes/task.hpp"
#include "mal/model/model.hpp"

namespace mal {

// Bundles a task spec with whatever backs it (ratings world, image or ratings store).
class EpisodeSource {
public:
    EpisodeSource() = default;

    static EpisodeSource synthetic(const TaskSpec& spec) {
        spec.validate();
        EpisodeSource s;
        s.spec_ = spec;
        s.spec_.source = "synthetic";
        if (spec.kind == TaskKind::regression)
            s.world_ = std::make_shared<const RatingsWorld>(RatingsWorld::from_spec(spec));
        return s;
    }

    static EpisodeSource images(const TaskSpec& spec, std::shared_ptr<const ImageStore> store) {
        MAL_REQUIRE(spec.kind == TaskKind::classification, "image stores back classification tasks");
        spec.validate();
        EpisodeSource s;
        s.spec_ = spec;
        s.spec_.source = "dataset";
        s.images_ = std::move(store);
        return s;
    }

    static EpisodeSource ratings(const TaskSpec& spec, std::shared_ptr<const RatingsStore> store,
                                 std::vector<std::int64_t> users = {}) {
        MAL_REQUIRE(spec.kind == TaskKind::regression, "ratings stores back regression tasks");
        spec.validate();
        EpisodeSource s;
        s.spec_ = spec;
        s.spec_.source = "dataset";
        s.ratings_ = std::move(store);
        s.users_ = std::move(users);
        return s;
    }

    const TaskSpec& spec() const noexcept { return spec_; }
    const RatingsWorld* world() const noexcept { return world_.get(); }
    const RatingsStore* ratings_store() const noexcept { return ratings_.get(); }
    const ImageStore* image_store() const noexcept { return images_.get(); }

    Episode generate(std::uint64_t seed) const {
        if (spec_.kind == TaskKind::classification)
            return images_ ? gen_classification_episode(spec_, *images_, seed) : gen_classification_episode(spec_, seed);
        if (ratings_) return gen_ratings_episode(spec_, *ratings_, seed, users_);
        MAL_REQUIRE(world_ != nullptr, "regression source has no ratings world");
        return gen_ratings_episode(spec_, *world_, seed);
    }

    // Task-dependent model fields: label layout and encoder input.
    void configure(ModelConfig& cfg) const {
        cfg.task = spec_.kind;
        cfg.num_classes = spec_.kind == TaskKind::classification ? spec_.num_classes : 1;
        cfg.scale = spec_.scale;
        if (spec_.kind == TaskKind::regression) {
            cfg.encoder = EncoderKind::lookup;
            cfg.num_ids = ratings_ ? ratings_->num_movies() : spec_.num_movies;
        } else if (images_) {
            cfg.encoder = EncoderKind::conv;
            cfg.image_side = images_->side;
        } else {
            cfg.encoder = EncoderKind::mlp;
            cfg.input_dim = spec_.feature_dim;
        }
    }

private:
    TaskSpec spec_;
    std::shared_ptr<const RatingsWorld> world_;
    std::shared_ptr<const ImageStore> images_;
    std::shared_ptr<const RatingsStore> ratings_;
    std::vector<std::int64_t> users_;
};

}  // namespace mal
