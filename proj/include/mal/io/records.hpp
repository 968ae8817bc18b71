#pragma once

// Line-delimited JSON records: training metrics, evaluation curves, episode dumps.

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mal/episodes/generator.hpp"
#include "mal/io/kvconfig.hpp"
#include "mal/training/evaluate.hpp"
#include "mal/training/trainer.hpp"

namespace mal {

using json = nlohmann::json;

// wall_time is informational; determinism comparisons drop it.
inline json to_json(const StepMetrics& m, double wall_time) {
    json j = {{"update", m.update},
              {"loss", m.loss},
              {"policy_loss", m.policy_loss},
              {"value_loss", m.value_loss},
              {"entropy", m.entropy},
              {"mean_fast_reward", m.mean_fast_reward},
              {"mean_slow_reward", m.mean_slow_reward},
              {"mean_total_reward", m.mean_total_reward},
              {"slow_metric", m.slow_metric},
              {"skipped", m.skipped},
              {"wall_time", wall_time}};
    if (!m.fault.empty()) j["fault"] = m.fault;
    return j;
}

inline json to_json(const Stat& s) { return {{"mean", s.mean()}, {"se", s.se()}, {"n", s.n}}; }

inline json to_json(const EvalReport& r) {
    json curve = json::array();
    for (const auto& p : r.curve) {
        json row = {{"t", p.t},
                    {"slow_metric", to_json(p.slow_metric)},
                    {"slow_reward", to_json(p.slow_reward)},
                    {"unique_labels", to_json(p.unique_labels)}};
        row["fast_metric"] = p.fast_metric.n ? to_json(p.fast_metric) : json(nullptr);
        curve.push_back(std::move(row));
    }
    return {{"policy", to_string(r.policy)},
            {"task", to_string(r.kind)},
            {"metric", r.kind == TaskKind::classification ? "accuracy" : "rmse"},
            {"episodes", r.episodes},
            {"seed", r.seed},
            {"curve", std::move(curve)}};
}

inline json label_json(const Label& y, TaskKind kind) {
    return kind == TaskKind::classification ? json(y.cls) : json(y.rating);
}

// One episode per line: spec, seed, item ids and their stored labels.
inline json episode_record(const Episode& ep) {
    json spec = json::object();
    visit_fields(ep.spec, [&](const char* k, const auto& v) { spec[k] = format_value(v); });
    auto items = [&](const std::vector<Item>& v) {
        json a = json::array();
        for (const auto& it : v) a.push_back({{"id", it.id}, {"label", label_json(it.label, ep.spec.kind)}});
        return a;
    };
    return {{"seed", ep.seed}, {"spec", std::move(spec)}, {"support", items(ep.support)}, {"eval", items(ep.eval)}};
}

inline TaskSpec spec_from_record(const json& rec) {
    KvDoc doc;
    doc.source = "episode record";
    std::size_t line = 0;
    for (const auto& [k, v] : rec.at("spec").items()) doc.entries[k] = KvEntry{v.get<std::string>(), ++line};
    return parse_task_text(doc);
}

// Replays a dumped episode through `source`; throws when the regenerated ids or labels differ.
inline Episode replay_episode(const json& rec, const EpisodeSource& source) {
    Episode ep = source.generate(rec.at("seed").get<std::uint64_t>());
    auto check = [&](const std::vector<Item>& items, const json& arr) {
        if (arr.size() != items.size()) throw GenerationError("episode replay: item count differs");
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (arr[i].at("id").get<std::int64_t>() != items[i].id ||
                arr[i].at("label") != label_json(items[i].label, ep.spec.kind))
                throw GenerationError("episode replay: item " + std::to_string(i) + " differs");
        }
    };
    check(ep.support, rec.at("support"));
    check(ep.eval, rec.at("eval"));
    return ep;
}

class JsonLinesWriter {
public:
    explicit JsonLinesWriter(std::ostream& out) : out_(out) {}
    void write(const json& j) {
        out_ << j.dump() << '\n';
        out_.flush();
    }

private:
    std::ostream& out_;
};

}  // namespace mal
