// Command-line entry point: train, eval, ablate, serve.
//
// Exit codes: 0 success, 1 other failure, 2 invalid configuration or
// incompatible checkpoint, 3 numeric fault during training.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mal/io/checkpoint.hpp"
#include "mal/io/records.hpp"
#include "mal/io/run_config.hpp"
#include "mal/service/http.hpp"
#include "mal/training/evaluate.hpp"
#include "mal/training/setup.hpp"
#include "mal/training/trainer.hpp"

namespace {

using Scalar = float;
using namespace mal;

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct ExitError {
    int code;
    std::string message;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        std::uint64_t v = 0;
        parse_value("seeds", detail::trim(tok), v);
        out.push_back(v);
    }
    if (out.empty()) throw ConfigError("seeds", "empty seed list");
    return out;
}

std::string checkpoint_path(const std::string& dir, std::size_t update) {
    return (std::filesystem::path(dir) / ("ckpt_" + std::to_string(update) + ".bin")).string();
}

int cmd_train(const std::string& config_path) {
    RunConfig cfg;
    EpisodeSource source;
    try {
        cfg = load_run_config(config_path);
        cfg.run.data_dir = data_dir_from_env(cfg.run.data_dir);
        source = build_source(cfg.task, cfg.run);
        source.configure(cfg.model);
        cfg.model.validate();
    } catch (const ConfigError& e) {
        throw ExitError{kExitConfig, std::string("invalid config: ") + e.what()};
    } catch (const ParseError& e) {
        throw ExitError{kExitConfig, std::string("invalid config: ") + e.what()};
    }

    Model<Scalar> model(cfg.model);
    pretrain_lookup(model, source, cfg.run);
    AdamState<Scalar> adam;
    adam.hyper.lr = cfg.train.lr;

    std::filesystem::create_directories(cfg.run.out_dir);
    std::ofstream metrics_file(std::filesystem::path(cfg.run.out_dir) / "metrics.jsonl", std::ios::trunc);
    JsonLinesWriter metrics(metrics_file);
    const auto start = std::chrono::steady_clock::now();
    auto wall = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

    for (std::size_t k = 0; k < cfg.train.imitation_steps; ++k) {
        const double loss = imitation_step(model, adam, source, batch_seeds(cfg.train, 1'000'000 + k), cfg.train);
        metrics.write({{"imitation_step", k}, {"loss", loss}, {"wall_time", wall()}});
    }

    std::size_t faults = 0;
    for (std::size_t u = 0; u < cfg.train.max_updates; ++u) {
        const auto m = training_step(model, adam, source, batch_seeds(cfg.train, u), cfg.train, u);
        metrics.write(to_json(m, wall()));
        faults = m.skipped ? faults + 1 : 0;
        if (faults >= cfg.run.max_consecutive_faults) {
            save_checkpoint(checkpoint_path(cfg.run.out_dir, u), model, cfg.task, u, adam);
            throw ExitError{kExitNumeric, "numeric fault: " + m.fault};
        }
        if (cfg.run.checkpoint_every > 0 && (u + 1) % cfg.run.checkpoint_every == 0)
            save_checkpoint(checkpoint_path(cfg.run.out_dir, u + 1), model, cfg.task, u + 1, adam);
        if (cfg.run.eval_every > 0 && (u + 1) % cfg.run.eval_every == 0) {
            auto rep = evaluate(model, source, cfg.run.eval_episodes, cfg.run.eval_seed);
            json line = to_json(rep);
            line["after_update"] = u + 1;
            metrics.write(line);
        }
    }
    const auto final_path = (std::filesystem::path(cfg.run.out_dir) / "final.bin").string();
    save_checkpoint(final_path, model, cfg.task, cfg.train.max_updates, adam);
    std::cerr << "wrote " << final_path << "\n";
    return 0;
}

struct Loaded {
    Checkpoint<Scalar> ck;
    TaskSpec task;
    RunOptions run;
    EpisodeSource source;
};

Loaded load_for_eval(const std::string& ckpt, const std::string& task_override, const std::string& data_dir) {
    Loaded l;
    try {
        l.ck = load_checkpoint<Scalar>(ckpt);
        l.task = task_override.empty() ? l.ck.task : parse_task_text(parse_kv_inline(task_override), l.ck.task);
        l.run.data_dir = data_dir_from_env(data_dir);
        l.source = build_source(l.task, l.run);
        ModelConfig probe = l.ck.model;
        l.source.configure(probe);
        if (probe.label_dim() != l.ck.model.label_dim() || probe.input_dim != l.ck.model.input_dim ||
            probe.encoder != l.ck.model.encoder || probe.num_ids != l.ck.model.num_ids)
            throw ConfigError("task", "task is incompatible with the checkpoint's dimensions");
    } catch (const CheckpointError& e) {
        throw ExitError{kExitConfig, e.what()};
    } catch (const ConfigError& e) {
        throw ExitError{kExitConfig, e.what()};
    } catch (const ParseError& e) {
        throw ExitError{kExitConfig, e.what()};
    }
    return l;
}

EvalOptions eval_options(PolicyKind policy, const Loaded& l, PopularityScores& pop) {
    EvalOptions eo;
    eo.policy = policy;
    if (policy == PolicyKind::popular_entropy) {
        pop = popularity_for(l.source, l.run);
        eo.popularity = &pop;
    }
    if (policy == PolicyKind::balanced && l.task.kind != TaskKind::classification)
        throw ExitError{kExitConfig, "policy balanced needs a classification task"};
    return eo;
}

int cmd_eval(const std::string& ckpt, const std::string& task, const std::string& policy_name, std::size_t episodes,
             const std::string& seeds, const std::string& data_dir) {
    auto l = load_for_eval(ckpt, task, data_dir);
    PolicyKind policy;
    try {
        policy = parse_policy(policy_name);
    } catch (const ConfigError& e) {
        throw ExitError{kExitConfig, e.what()};
    }
    auto model = model_from_checkpoint(l.ck);
    PopularityScores pop;
    const auto eo = eval_options(policy, l, pop);
    JsonLinesWriter out(std::cout);
    for (auto seed : parse_seed_list(seeds)) out.write(to_json(evaluate(model, l.source, episodes, seed, eo)));
    return 0;
}

int cmd_ablate(const std::string& ckpt, const std::string& task, const std::string& component, std::size_t episodes,
               std::uint64_t seed, std::size_t steps, const std::string& data_dir) {
    auto l = load_for_eval(ckpt, task, data_dir);
    auto full = model_from_checkpoint(l.ck);
    ModelConfig ablated_cfg = l.ck.model;
    if (component == "gamma")
        ablated_cfg.use_gamma = false;
    else if (component == "ctx_encoder")
        ablated_cfg.use_ctx_encoder = false;
    else if (component == "matching_steps")
        ablated_cfg.matching_steps = steps;
    else
        throw ExitError{kExitConfig, "unknown component '" + component + "'"};
    Checkpoint<Scalar> ck2 = l.ck;
    ck2.model = ablated_cfg;
    auto ablated = model_from_checkpoint(ck2);
    JsonLinesWriter out(std::cout);
    auto a = to_json(evaluate(full, l.source, episodes, seed));
    a["variant"] = "full";
    out.write(a);
    auto b = to_json(evaluate(ablated, l.source, episodes, seed));
    b["variant"] = "without_" + component;
    out.write(b);
    return 0;
}

int cmd_serve(const std::string& ckpt, int port, const std::string& host, const std::string& data_dir) {
    auto l = load_for_eval(ckpt, "", data_dir);
    auto model = model_from_checkpoint(l.ck);
    SessionService<Scalar> service(model, l.task);
    const RunOptions run = l.run;
    if (l.task.source == "dataset")
        service.source_factory = [run](const TaskSpec& spec) { return build_source(spec, run); };
    httplib::Server server;
    mount_routes(server, service);
    port = port_from_env(port);
    std::cerr << "serving on " << host << ":" << port << "\n";
    if (!server.listen(host, port)) throw ExitError{1, "cannot listen on port " + std::to_string(port)};
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Meta active learning: train, evaluate and serve label-query policies"};
    app.require_subcommand(1);

    std::string config_path;
    auto* train = app.add_subcommand("train", "Meta-train a model from a config file");
    train->add_option("--config", config_path, "key = value config file")->required();

    std::string ckpt, task, policy = "active", seeds = "0", data_dir;
    std::size_t episodes = 100;
    auto* eval = app.add_subcommand("eval", "Anytime evaluation curves for a policy");
    eval->add_option("--ckpt", ckpt, "checkpoint file")->required();
    eval->add_option("--task", task, "task overrides, e.g. num_classes=5,budget=5");
    eval->add_option("--policy", policy, "active|random|balanced|min_max_cos|entropy|popular_entropy");
    eval->add_option("--episodes", episodes, "episodes per seed");
    eval->add_option("--seeds", seeds, "comma-separated evaluation seeds");
    eval->add_option("--data-dir", data_dir, "dataset root for dataset-backed tasks");

    std::string component;
    std::uint64_t seed = 0;
    std::size_t steps = 1;
    auto* ablate = app.add_subcommand("ablate", "Compare the model with one component disabled");
    ablate->add_option("--ckpt", ckpt, "checkpoint file")->required();
    ablate->add_option("--component", component, "gamma|ctx_encoder|matching_steps")
        ->required()
        ->check(CLI::IsMember({"gamma", "ctx_encoder", "matching_steps"}));
    ablate->add_option("--task", task, "task overrides");
    ablate->add_option("--episodes", episodes, "evaluation episodes");
    ablate->add_option("--seed", seed, "evaluation seed");
    ablate->add_option("--steps", steps, "matching steps for the matching_steps ablation");
    ablate->add_option("--data-dir", data_dir, "dataset root for dataset-backed tasks");

    int port = 8080;
    std::string host = "127.0.0.1";
    auto* serve = app.add_subcommand("serve", "HTTP session API over a checkpoint");
    serve->add_option("--ckpt", ckpt, "checkpoint file")->required();
    serve->add_option("--port", port, "listen port (MAL_PORT overrides)");
    serve->add_option("--host", host, "listen address");
    serve->add_option("--data-dir", data_dir, "dataset root (MAL_DATA_DIR overrides)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : kExitConfig;
    }

    try {
        if (*train) return cmd_train(config_path);
        if (*eval) return cmd_eval(ckpt, task, policy, episodes, seeds, data_dir);
        if (*ablate) return cmd_ablate(ckpt, task, component, episodes, seed, steps, data_dir);
        if (*serve) return cmd_serve(ckpt, port, host, data_dir);
    } catch (const ExitError& e) {
        std::cerr << e.message << "\n";
        return e.code;
    } catch (const NumericFault& e) {
        std::cerr << "numeric fault: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ConfigError& e) {
        std::cerr << "invalid config: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
