#pragma once

// A training run's full configuration: task, model widths, optimizer and
// run bookkeeping, all read from one flat key = value file.

#include <cstdint>
#include <string>

#include "mal/io/kvconfig.hpp"

namespace mal {

struct RunOptions {
    std::string out_dir = "run";
    std::size_t checkpoint_every = 100;
    std::size_t eval_every = 0;
    std::size_t eval_episodes = 100;
    std::uint64_t eval_seed = 1000;
    std::size_t max_consecutive_faults = 5;
    // dataset-backed tasks
    std::string data_dir;
    std::string data_format;  // images | ratings
    std::string class_list;
    std::string ratings_file = "ratings.csv";
    std::size_t top_movies = 0;
    std::size_t top_users = 0;
    // latent-factor pretraining of the lookup table (ratings tasks)
    bool pretrain_embeddings = true;
    std::size_t factor_users = 500;
    std::size_t factor_per_user = 40;
    std::size_t factor_epochs = 30;
    double factor_lr = 0.02;
    double factor_l2 = 0.01;
};

template <typename S, typename F>
void visit_fields(S& r, F&& f)
    requires std::is_same_v<std::remove_const_t<S>, RunOptions>
{
    f("out_dir", r.out_dir);
    f("checkpoint_every", r.checkpoint_every);
    f("eval_every", r.eval_every);
    f("eval_episodes", r.eval_episodes);
    f("eval_seed", r.eval_seed);
    f("max_consecutive_faults", r.max_consecutive_faults);
    f("data_dir", r.data_dir);
    f("data_format", r.data_format);
    f("class_list", r.class_list);
    f("ratings_file", r.ratings_file);
    f("top_movies", r.top_movies);
    f("top_users", r.top_users);
    f("pretrain_embeddings", r.pretrain_embeddings);
    f("factor_users", r.factor_users);
    f("factor_per_user", r.factor_per_user);
    f("factor_epochs", r.factor_epochs);
    f("factor_lr", r.factor_lr);
    f("factor_l2", r.factor_l2);
}

struct RunConfig {
    TaskSpec task;
    ModelConfig model;
    TrainConfig train;
    RunOptions run;
};

// Unknown keys and malformed values surface as ConfigError naming the field.
inline RunConfig parse_run_config(const KvDoc& doc) {
    KvReader r(doc);
    RunConfig c;
    r.read(c.task);
    r.read(c.model);
    r.read(c.train);
    r.read(c.run);
    r.finish();
    c.task.validate();
    c.train.validate();
    if (c.run.eval_every > 0 && c.run.eval_episodes == 0) throw ConfigError("eval_episodes", "must be positive");
    if (!c.run.data_format.empty()) parse_dataset_format(c.run.data_format);
    return c;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(parse_kv_file(path)); }

}  // namespace mal
