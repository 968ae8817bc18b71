#pragma once

// Flat `key = value` documents with `#` comments. One field table per struct
// drives parsing, validation messages and canonical dumping.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

#include "mal/baselines/heuristics.hpp"
#include "mal/core/errors.hpp"
#include "mal/episodes/task.hpp"
#include "mal/model/model.hpp"
#include "mal/training/trainer.hpp"

namespace mal {

struct KvEntry {
    std::string value;
    std::size_t line = 0;
};

struct KvDoc {
    std::string source;
    std::map<std::string, KvEntry> entries;
};

namespace detail {

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline void add_entry(KvDoc& doc, std::string_view raw, std::size_t line) {
    const auto eq = raw.find('=');
    if (eq == std::string_view::npos) throw ParseError(doc.source, line, "expected key = value");
    auto key = trim(raw.substr(0, eq));
    auto value = trim(raw.substr(eq + 1));
    if (key.empty()) throw ParseError(doc.source, line, "empty key");
    if (!doc.entries.emplace(key, KvEntry{value, line}).second)
        throw ParseError(doc.source, line, "duplicate key '" + key + "'");
}

}  // namespace detail

inline KvDoc parse_kv_text(const std::string& text, const std::string& source = "<config>") {
    KvDoc doc;
    doc.source = source;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (detail::trim(line).empty()) continue;
        detail::add_entry(doc, line, lineno);
    }
    return doc;
}

inline KvDoc parse_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_kv_text(ss.str(), path);
}

// Inline form used on the command line: "kind=classification,num_classes=5".
inline KvDoc parse_kv_inline(const std::string& text, const std::string& source = "--task") {
    KvDoc doc;
    doc.source = source;
    std::size_t start = 0, item = 0;
    while (start <= text.size()) {
        auto comma = text.find(',', start);
        if (comma == std::string::npos) comma = text.size();
        const auto part = detail::trim(std::string_view(text).substr(start, comma - start));
        ++item;
        if (!part.empty()) detail::add_entry(doc, part, item);
        start = comma + 1;
    }
    return doc;
}

// ---- scalar conversions --------------------------------------------------

inline std::string format_value(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}
inline std::string format_value(bool v) { return v ? "true" : "false"; }
inline std::string format_value(const std::string& v) { return v; }
inline std::string format_value(TaskKind v) { return to_string(v); }
inline std::string format_value(EncoderKind v) { return to_string(v); }
inline std::string format_value(PolicyKind v) { return to_string(v); }
template <typename I>
    requires std::is_integral_v<I>
std::string format_value(I v) {
    return std::to_string(v);
}

template <typename V>
void parse_value(const std::string& field, const std::string& s, V& out) {
    auto bad = [&](const std::string& what) { return ConfigError(field, what + " (got '" + s + "')"); };
    if constexpr (std::is_same_v<V, bool>) {
        if (s == "true" || s == "1") out = true;
        else if (s == "false" || s == "0") out = false;
        else throw bad("expected true or false");
    } else if constexpr (std::is_same_v<V, std::string>) {
        out = s;
    } else if constexpr (std::is_same_v<V, TaskKind>) {
        if (s == "classification") out = TaskKind::classification;
        else if (s == "regression" || s == "ratings") out = TaskKind::regression;
        else throw bad("expected classification or regression");
    } else if constexpr (std::is_same_v<V, EncoderKind>) {
        if (s == "mlp") out = EncoderKind::mlp;
        else if (s == "conv") out = EncoderKind::conv;
        else if (s == "lookup") out = EncoderKind::lookup;
        else throw bad("expected mlp, conv or lookup");
    } else if constexpr (std::is_same_v<V, PolicyKind>) {
        out = parse_policy(s);
    } else if constexpr (std::is_floating_point_v<V>) {
        const char* end = s.data() + s.size();
        auto r = std::from_chars(s.data(), end, out);
        if (r.ec != std::errc{} || r.ptr != end) throw bad("expected a number");
    } else {
        static_assert(std::is_integral_v<V>);
        if (!s.empty() && s.front() == '-' && std::is_unsigned_v<V>) throw bad("must be non-negative");
        const char* end = s.data() + s.size();
        auto r = std::from_chars(s.data(), end, out);
        if (r.ec != std::errc{} || r.ptr != end) throw bad("expected an integer");
    }
}

// ---- field tables ------------------------------------------------------------

template <typename S, typename F>
void visit_fields(S& t, F&& f)
    requires std::is_same_v<std::remove_const_t<S>, TaskSpec>
{
    f("kind", t.kind);
    f("source", t.source);
    f("num_classes", t.num_classes);
    f("support_per_class", t.support_per_class);
    f("eval_per_class", t.eval_per_class);
    f("feature_dim", t.feature_dim);
    f("sigma_cluster", t.sigma_cluster);
    f("support_size", t.support_size);
    f("eval_size", t.eval_size);
    f("latent_rank", t.latent_rank);
    f("rating_noise", t.rating_noise);
    f("num_movies", t.num_movies);
    f("factor_scale", t.factor_scale);
    f("movie_bias_scale", t.movie_bias_scale);
    f("global_mean", t.global_mean);
    f("world_seed", t.world_seed);
    f("rating_min", t.scale.min);
    f("rating_max", t.scale.max);
    f("rating_step", t.scale.step);
    f("budget", t.budget);
}

template <typename S, typename F>
void visit_fields(S& m, F&& f)
    requires std::is_same_v<std::remove_const_t<S>, ModelConfig>
{
    f("encoder", m.encoder);
    f("input_dim", m.input_dim);
    f("mlp_hidden", m.mlp_hidden);
    f("image_side", m.image_side);
    f("conv_filters", m.conv_filters);
    f("num_ids", m.num_ids);
    f("embed_dim", m.embed_dim);
    f("enc_hidden", m.enc_hidden);
    f("ctrl_hidden", m.ctrl_hidden);
    f("read_dim", m.read_dim);
    f("match_hidden", m.match_hidden);
    f("matching_steps", m.matching_steps);
    f("layer_norm", m.layer_norm);
    f("leaky_slope", m.leaky_slope);
    f("gamma_log_clip", m.gamma_log_clip);
    f("use_gamma", m.use_gamma);
    f("use_ctx_encoder", m.use_ctx_encoder);
    f("init_seed", m.init_seed);
}

template <typename S, typename F>
void visit_fields(S& c, F&& f)
    requires std::is_same_v<std::remove_const_t<S>, TrainConfig>
{
    f("lr", c.lr);
    f("gae_gamma", c.gae_gamma);
    f("gae_lambda", c.gae_lambda);
    f("value_weight", c.value_weight);
    f("entropy_weight", c.entropy_weight);
    f("batch", c.batch);
    f("max_updates", c.max_updates);
    f("seed", c.seed);
    f("policy", c.policy);
    f("pathwise", c.pathwise);
    f("policy_gradient", c.policy_gradient);
    f("imitation_steps", c.imitation_steps);
    f("normalize_advantages", c.normalize_advantages);
    f("detach_critic", c.detach_critic);
}

// Task-level model fields (label layout) live in ModelConfig too; they are
// dumped so a checkpoint alone rebuilds the model.
template <typename S, typename F>
void visit_model_task_fields(S& m, F&& f) {
    f("task", m.task);
    f("num_classes", m.num_classes);
    f("rating_min", m.scale.min);
    f("rating_max", m.scale.max);
    f("rating_step", m.scale.step);
}

// Consumes keys from a document; anything left over is an unknown field.
class KvReader {
public:
    explicit KvReader(KvDoc doc) : doc_(std::move(doc)) {}

    template <typename V>
    bool get(const std::string& key, V& out) {
        auto it = doc_.entries.find(key);
        if (it == doc_.entries.end()) return false;
        try {
            parse_value(key, it->second.value, out);
        } catch (const ConfigError& e) {
            throw ConfigError(key, std::string(e.what()) + " at " + doc_.source + ":" + std::to_string(it->second.line));
        }
        used_.push_back(key);
        return true;
    }

    template <typename S>
    void read(S& s) {
        visit_fields(s, [&](const char* k, auto& v) { get(k, v); });
    }

    void finish() const {
        for (const auto& [k, e] : doc_.entries)
            if (std::find(used_.begin(), used_.end(), k) == used_.end())
                throw ConfigError(k, "unknown field at " + doc_.source + ":" + std::to_string(e.line));
    }

private:
    KvDoc doc_;
    std::vector<std::string> used_;
};

template <typename S>
std::string to_kv_text(const S& s) {
    std::string out;
    visit_fields(s, [&](const char* k, const auto& v) { out += std::string(k) + " = " + format_value(v) + "\n"; });
    return out;
}

inline std::string model_config_text(const ModelConfig& m) {
    std::string out;
    visit_model_task_fields(m, [&](const char* k, const auto& v) { out += std::string(k) + " = " + format_value(v) + "\n"; });
    return out + to_kv_text(m);
}

inline ModelConfig parse_model_config_text(const std::string& text, const std::string& source) {
    KvReader r(parse_kv_text(text, source));
    ModelConfig m;
    visit_model_task_fields(m, [&](const char* k, auto& v) { r.get(k, v); });
    r.read(m);
    r.finish();
    m.validate();
    return m;
}

inline TaskSpec parse_task_text(const KvDoc& doc, TaskSpec base = {}) {
    KvReader r(doc);
    r.read(base);
    r.finish();
    base.validate();
    return base;
}

// FNV-1a, 64-bit.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace mal
