#pragma once

// Wiring shared by the CLI, the acceptance suite and the service: episode
// sources from a run config, lookup-table pretraining, popularity scores.

#include <filesystem>
#include <memory>
#include <vector>

#include "mal/baselines/heuristics.hpp"
#include "mal/episodes/factorize.hpp"
#include "mal/episodes/generator.hpp"
#include "mal/io/run_config.hpp"
#include "mal/model/encoders.hpp"

namespace mal {

inline EpisodeSource build_source(const TaskSpec& task, const RunOptions& run) {
    if (task.source == "synthetic") return EpisodeSource::synthetic(task);
    if (run.data_dir.empty()) throw ConfigError("data_dir", "dataset tasks need a data directory");
    const std::filesystem::path root(run.data_dir);
    const auto fmt = parse_dataset_format(run.data_format.empty()
                                              ? (task.kind == TaskKind::classification ? "images" : "ratings")
                                              : run.data_format);
    if (fmt == DatasetFormat::images) {
        if (task.kind != TaskKind::classification) throw ConfigError("data_format", "images back classification tasks");
        std::vector<std::string> only;
        if (!run.class_list.empty()) only = read_class_list(run.class_list);
        return EpisodeSource::images(task, std::make_shared<const ImageStore>(load_image_classes(root, only)));
    }
    if (task.kind != TaskKind::regression) throw ConfigError("data_format", "ratings back regression tasks");
    auto store = load_ratings_store(root / run.ratings_file, {run.top_movies, run.top_users}, task.scale);
    return EpisodeSource::ratings(task, std::make_shared<const RatingsStore>(std::move(store)));
}

// Ratings observed outside evaluation episodes: the synthetic world's training
// population, or the whole loaded table.
inline std::vector<RatingRecord> background_ratings(const EpisodeSource& source, const RunOptions& run) {
    if (const auto* w = source.world())
        return w->training_ratings(run.factor_users, std::min(run.factor_per_user, w->num_movies()),
                                   derive_seed(source.spec().world_seed, 0x626b67ULL));
    if (const auto* s = source.ratings_store()) return s->records;
    throw ConfigError("task", "background ratings exist only for ratings tasks");
}

inline FactorModel pretrain_factors(const std::vector<RatingRecord>& ratings, std::size_t rank, const RunOptions& run) {
    FactorizeOptions fo;
    fo.rank = rank;
    fo.epochs = run.factor_epochs;
    fo.lr = run.factor_lr;
    fo.l2 = run.factor_l2;
    return factorize_ratings(ratings, fo);
}

inline PopularityScores popularity_for(const EpisodeSource& source, const RunOptions& run) {
    return popularity_entropy_scores(background_ratings(source, run), source.spec().scale);
}

template <typename T>
void pretrain_lookup(Model<T>& model, const EpisodeSource& source, const RunOptions& run) {
    if (model.config().encoder != EncoderKind::lookup || !run.pretrain_embeddings) return;
    const auto fm = pretrain_factors(background_ratings(source, run), model.config().embed_dim, run);
    load_pretrained_rows(model, fm.item_table());
}

}  // namespace mal
