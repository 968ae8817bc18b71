#pragma once

// Interactive episodes driven by an external labeler. Transport-free: every
// call returns an HTTP-style status and a JSON body.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "mal/core/rng.hpp"
#include "mal/episodes/generator.hpp"
#include "mal/io/kvconfig.hpp"
#include "mal/io/records.hpp"
#include "mal/model/runner.hpp"
#include "mal/training/rollout.hpp"

namespace mal {

struct Reply {
    int status = 200;
    json body;
};

inline Reply error_reply(int status, const std::string& code, const std::string& message) {
    return {status, {{"error", code}, {"message", message}}};
}

template <typename T>
class Session {
public:
    Session(std::string id, const Model<T>& model, Episode ep, bool human_oracle)
        : id_(std::move(id)), model_(model), ep_(std::move(ep)), human_(human_oracle), tape_(false),
          run_(model, tape_, ep_.support, ep_.eval, ep_.seed) {}

    std::mutex& mutex() { return mu_; }
    const Episode& episode() const { return ep_; }

    json created() const {
        const auto& s = ep_.spec;
        json task = {{"kind", to_string(s.kind)}, {"budget", s.budget}};
        if (s.kind == TaskKind::classification)
            task["num_classes"] = s.num_classes;
        else
            task["scale"] = {{"min", s.scale.min}, {"max", s.scale.max}, {"step", s.scale.step}};
        return {{"session_id", id_}, {"task", task},        {"support", public_items(ep_.support)},
                {"eval", public_items(ep_.eval)}, {"t", 0}, {"budget", s.budget},
                {"mode", human_ ? "human" : "stored"}};
    }

    // Repeated calls without a label in between return the same item.
    Reply query() {
        if (run_.t() >= ep_.spec.budget) return {200, {{"status", "budget_exhausted"}, {"t", run_.t()}, {"budget", ep_.spec.budget}}};
        if (!pending_) pending_ = run_.select(SelectMode::argmax, nullptr).index;
        return {200,
                {{"status", "query"},
                 {"item", public_item(ep_.support[*pending_], *pending_)},
                 {"t", run_.t()},
                 {"budget", ep_.spec.budget}}};
    }

    Reply label(const json& body) {
        if (!pending_) return error_reply(409, "no_pending_query", "request a query before submitting a label");
        if (body.contains("item_id") && body.at("item_id") != json(ep_.support[*pending_].id))
            return error_reply(409, "wrong_item", "label refers to an item other than the pending query");
        if (!body.contains("label")) return error_reply(422, "invalid_label", "missing label");
        Label y;
        const auto& s = ep_.spec;
        const auto& v = body.at("label");
        if (s.kind == TaskKind::classification) {
            if (!v.is_number_integer() || v.get<long long>() < 0 || v.get<long long>() >= static_cast<long long>(s.num_classes))
                return error_reply(422, "invalid_label", "class label must be an integer in [0, " +
                                                             std::to_string(s.num_classes) + ")");
            y = Label::of_class(v.get<int>());
        } else {
            if (!v.is_number() || !s.scale.valid(v.get<double>()))
                return error_reply(422, "invalid_label", "rating must lie on the task's rating scale");
            y = Label::of_rating(s.scale.quantize(v.get<double>()));
        }
        const auto index = *pending_;
        if (!human_ && !(y == ep_.support[index].label))
            return error_reply(422, "label_mismatch", "stored-label mode: submitted label disagrees with the data");
        run_.reveal(index, y);
        pending_.reset();
        record_curve_point();
        return {200, {{"status", "ok"}, {"t", run_.t()}, {"budget", s.budget}}};
    }

    Reply predictions() const {
        json body = {{"t", run_.t()}, {"budget", ep_.spec.budget}};
        if (run_.t() == 0) {
            body["slow"] = {{"status", "no_evidence"}};
            body["fast"] = {{"status", "no_evidence"}};
        } else {
            auto sp = run_.slow();
            body["slow"] = {{"status", "ok"}, {"predictions", rows(sp.prediction.value(), ep_.eval, nullptr)}};
            auto fp = run_.fast();
            body["fast"] = {{"status", "ok"},
                            {"predictions", fp.empty() ? json::array() : rows(fp.prediction.value(), ep_.support, &fp.items)}};
        }
        body["metric"] = ep_.spec.kind == TaskKind::classification ? "accuracy" : "rmse";
        body["metric_curve"] = curve_;
        return {200, body};
    }

private:
    json public_item(const Item& it, std::size_t index) const {
        json j = {{"index", index}, {"id", it.id}};
        j["features"] = it.features;
        return j;
    }

    json public_items(const std::vector<Item>& items) const {
        json a = json::array();
        for (std::size_t i = 0; i < items.size(); ++i) a.push_back(public_item(items[i], i));
        return a;
    }

    json rows(const Tensor<T>& pred, const std::vector<Item>& items, const std::vector<std::size_t>* which) const {
        json a = json::array();
        for (std::size_t r = 0; r < pred.rows(); ++r) {
            const auto& it = items[which ? (*which)[r] : r];
            json p;
            if (ep_.spec.kind == TaskKind::classification) {
                std::vector<double> probs(pred.row_span(r).begin(), pred.row_span(r).end());
                p = probs;
            } else {
                p = static_cast<double>(pred(r, 0));
            }
            a.push_back({{"id", it.id}, {"prediction", p}});
        }
        return a;
    }

    // Aggregate anytime metric on E against stored labels (no per-item truth leaves the server).
    void record_curve_point() {
        const auto score = score_predictions(run_.slow().prediction.value(), labels_of(ep_.eval), ep_.spec.kind);
        curve_.push_back({{"t", run_.t()}, {"value", metric_of(score, ep_.spec.kind)}});
    }

    std::string id_;
    const Model<T>& model_;
    Episode ep_;
    bool human_;
    ad::Tape<T> tape_;
    ActiveRun<T> run_;
    std::optional<std::size_t> pending_;
    json curve_ = json::array();
    std::mutex mu_;
};

// Session registry; sessions are independent and individually locked.
template <typename T>
class SessionService {
public:
    SessionService(const Model<T>& model, TaskSpec default_task) : model_(model), default_task_(std::move(default_task)) {}

    // Body: {"task": {...} | "k=v,...", "seed": n, "episode": i, "mode": "stored" | "human"}.
    Reply create(const json& body) {
        TaskSpec spec = default_task_;
        std::uint64_t seed = 0, index = 0;
        bool human = false;
        try {
            if (body.contains("task")) {
                const auto& t = body.at("task");
                KvDoc doc;
                if (t.is_string()) {
                    doc = parse_kv_inline(t.get<std::string>(), "task");
                } else {
                    doc.source = "task";
                    std::size_t line = 0;
                    for (auto it = t.begin(); it != t.end(); ++it) {
                        const json& v = it.value();
                        doc.entries[it.key()] = KvEntry{v.is_string() ? v.get<std::string>() : v.dump(), ++line};
                    }
                }
                spec = parse_task_text(doc, default_task_);
            }
            if (body.contains("seed")) seed = body.at("seed").get<std::uint64_t>();
            if (body.contains("episode")) index = body.at("episode").get<std::uint64_t>();
            if (body.contains("mode")) {
                const auto mode = body.at("mode").get<std::string>();
                if (mode != "stored" && mode != "human") return error_reply(422, "invalid_mode", "mode is stored or human");
                human = mode == "human";
            }
            check_compatible(spec);
        } catch (const ConfigError& e) {
            return error_reply(422, "invalid_task", e.what());
        } catch (const ParseError& e) {
            return error_reply(422, "invalid_task", e.what());
        } catch (const json::exception& e) {
            return error_reply(400, "bad_request", e.what());
        }
        EpisodeSource source = make_source(spec);
        Episode ep = source.generate(episode_seed(seed, index));
        std::lock_guard lock(mu_);
        const std::string id = "s" + std::to_string(++next_id_);
        auto s = std::make_shared<Session<T>>(id, model_, std::move(ep), human);
        auto reply = s->created();
        sessions_.emplace(id, std::move(s));
        return {201, reply};
    }

    Reply query(const std::string& id) {
        return with(id, [](Session<T>& s) { return s.query(); });
    }
    Reply label(const std::string& id, const json& body) {
        return with(id, [&](Session<T>& s) { return s.label(body); });
    }
    Reply predictions(const std::string& id) {
        return with(id, [](Session<T>& s) { return s.predictions(); });
    }
    Reply remove(const std::string& id) {
        std::lock_guard lock(mu_);
        if (sessions_.erase(id) == 0) return error_reply(404, "unknown_session", "no session " + id);
        return {200, {{"deleted", id}}};
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return sessions_.size();
    }

    // Sources for non-synthetic data can be injected (ratings/image stores).
    std::function<EpisodeSource(const TaskSpec&)> source_factory;

private:
    EpisodeSource make_source(const TaskSpec& spec) const {
        return source_factory ? source_factory(spec) : EpisodeSource::synthetic(spec);
    }

    void check_compatible(const TaskSpec& spec) const {
        ModelConfig probe = model_.config();
        make_source(spec).configure(probe);
        const auto& m = model_.config();
        if (probe.task != m.task || probe.label_dim() != m.label_dim() || probe.encoder != m.encoder ||
            probe.input_dim != m.input_dim || probe.num_ids != m.num_ids || probe.image_side != m.image_side)
            throw ConfigError("task", "task does not match the loaded model's label layout or encoder input");
    }

    template <typename F>
    Reply with(const std::string& id, F&& f) {
        std::shared_ptr<Session<T>> s;
        {
            std::lock_guard lock(mu_);
            auto it = sessions_.find(id);
            if (it == sessions_.end()) return error_reply(404, "unknown_session", "no session " + id);
            s = it->second;
        }
        std::lock_guard lock(s->mutex());
        return f(*s);
    }

    const Model<T>& model_;
    TaskSpec default_task_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<Session<T>>> sessions_;
    std::uint64_t next_id_ = 0;
};

}  // namespace mal
