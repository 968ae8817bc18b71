#pragma once

// Versioned binary checkpoint: header (magic, version, config hash, dims),
// model and task config text, named parameter tensors, Adam state.
// All integers little-endian; tensors stored at their native scalar width.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "mal/core/adam.hpp"
#include "mal/core/errors.hpp"
#include "mal/io/kvconfig.hpp"
#include "mal/model/model.hpp"

namespace mal {

inline constexpr char kCheckpointMagic[8] = {'M', 'A', 'L', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

template <typename T>
struct Checkpoint {
    ModelConfig model;
    TaskSpec task;
    std::uint64_t update = 0;
    ParameterStore<T> params;
    AdamState<T> adam;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

class BlobWriter {
public:
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    template <typename I>
    void pod(I v) {
        static_assert(std::is_trivially_copyable_v<I>);
        bytes(&v, sizeof v);
    }
    void str(const std::string& s) {
        pod<std::uint64_t>(s.size());
        bytes(s.data(), s.size());
    }
    template <typename T>
    void tensor(const Tensor<T>& t) {
        pod<std::uint64_t>(t.rows());
        pod<std::uint64_t>(t.cols());
        bytes(t.data().data(), t.size() * sizeof(T));
    }
    const std::string& data() const noexcept { return buf_; }

private:
    std::string buf_;
};

class BlobReader {
public:
    BlobReader(const std::string& data, std::string source) : data_(data), source_(std::move(source)) {}
    void bytes(void* p, std::size_t n) {
        if (n > data_.size() - pos_) throw CheckpointError(source_ + ": truncated checkpoint");
        std::memcpy(p, data_.data() + pos_, n);
        pos_ += n;
    }
    template <typename I>
    I pod() {
        I v{};
        bytes(&v, sizeof v);
        return v;
    }
    std::string str() {
        const auto n = pod<std::uint64_t>();
        if (n > data_.size() - pos_) throw CheckpointError(source_ + ": truncated string");
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    template <typename T>
    Tensor<T> tensor() {
        const auto r = pod<std::uint64_t>();
        const auto c = pod<std::uint64_t>();
        if (r != 0 && c > (data_.size() - pos_) / sizeof(T) / r) throw CheckpointError(source_ + ": bad tensor shape");
        Tensor<T> t(r, c);
        bytes(t.data().data(), t.size() * sizeof(T));
        return t;
    }
    bool done() const noexcept { return pos_ == data_.size(); }

private:
    const std::string& data_;
    std::size_t pos_ = 0;
    std::string source_;
};

}  // namespace detail

inline std::uint64_t config_hash(const ModelConfig& m) { return fnv1a(model_config_text(m)); }

template <typename T>
std::string serialize_checkpoint(const ModelConfig& model, const TaskSpec& task, std::uint64_t update,
                                 const ParameterStore<T>& params, const AdamState<T>& adam) {
    detail::BlobWriter w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.pod<std::uint32_t>(kCheckpointVersion);
    w.pod<std::uint32_t>(sizeof(T));
    w.pod<std::uint64_t>(config_hash(model));
    for (auto d : {model.embed_dim, model.enc_hidden, model.ctrl_hidden, model.read_dim, model.match_hidden,
                   model.label_dim()})
        w.pod<std::uint64_t>(d);
    w.str(model_config_text(model));
    w.str(to_kv_text(task));
    w.pod<std::uint64_t>(update);
    w.pod<std::uint64_t>(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        w.str(params.name(i));
        w.tensor(params[i]);
    }
    const auto& h = adam.hyper;
    for (double x : {h.lr, h.beta1, h.beta2, h.eps}) w.pod<double>(x);
    w.pod<std::uint64_t>(adam.step);
    const bool has_moments = adam.m.size() == params.size();
    w.pod<std::uint8_t>(has_moments ? 1 : 0);
    if (has_moments)
        for (std::size_t i = 0; i < params.size(); ++i) {
            w.tensor(adam.m[i]);
            w.tensor(adam.v[i]);
        }
    return w.data();
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& blob, const std::string& source = "<checkpoint>") {
    detail::BlobReader r(blob, source);
    char magic[8];
    r.bytes(magic, sizeof magic);
    if (std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw CheckpointError(source + ": not a checkpoint");
    if (const auto v = r.pod<std::uint32_t>(); v != kCheckpointVersion)
        throw CheckpointError(source + ": unsupported format version " + std::to_string(v));
    if (const auto width = r.pod<std::uint32_t>(); width != sizeof(T))
        throw CheckpointError(source + ": stored scalar width " + std::to_string(width) + " differs from the reader");
    const auto hash = r.pod<std::uint64_t>();
    std::uint64_t dims[6];
    for (auto& d : dims) d = r.pod<std::uint64_t>();

    Checkpoint<T> ck;
    try {
        ck.model = parse_model_config_text(r.str(), source + " (model config)");
        ck.task = parse_task_text(parse_kv_text(r.str(), source + " (task)"));
    } catch (const ConfigError& e) {
        throw CheckpointError(source + ": " + e.what());
    }
    if (config_hash(ck.model) != hash) throw CheckpointError(source + ": config hash mismatch");
    const std::uint64_t expect[6] = {ck.model.embed_dim, ck.model.enc_hidden, ck.model.ctrl_hidden,
                                     ck.model.read_dim,  ck.model.match_hidden, ck.model.label_dim()};
    for (int k = 0; k < 6; ++k)
        if (dims[k] != expect[k]) throw CheckpointError(source + ": header dims disagree with the stored config");
    ck.update = r.pod<std::uint64_t>();
    const auto n = r.pod<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) {
        auto name = r.str();
        ck.params.add(name, r.tensor<T>());
    }
    auto& h = ck.adam.hyper;
    h.lr = r.pod<double>();
    h.beta1 = r.pod<double>();
    h.beta2 = r.pod<double>();
    h.eps = r.pod<double>();
    ck.adam.step = r.pod<std::uint64_t>();
    if (r.pod<std::uint8_t>()) {
        for (std::uint64_t i = 0; i < n; ++i) {
            ck.adam.m.push_back(r.tensor<T>());
            ck.adam.v.push_back(r.tensor<T>());
        }
    }
    if (!r.done()) throw CheckpointError(source + ": trailing bytes");
    return ck;
}

// Copies stored tensors into a freshly built model; names and shapes must agree.
template <typename T>
void load_parameters(Model<T>& model, const ParameterStore<T>& stored) {
    auto& p = model.params();
    if (p.size() != stored.size())
        throw CheckpointError("checkpoint has " + std::to_string(stored.size()) + " tensors, model expects " +
                              std::to_string(p.size()));
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p.name(i) != stored.name(i) || !p[i].same_shape(stored[i]))
            throw CheckpointError("checkpoint tensor '" + stored.name(i) + "' does not match model layout");
        p[i] = stored[i];
    }
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename T>
void save_checkpoint(const std::string& path, const Model<T>& model, const TaskSpec& task, std::uint64_t update,
                     const AdamState<T>& adam) {
    write_file(path, serialize_checkpoint(model.config(), task, update, model.params(), adam));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    return deserialize_checkpoint<T>(read_file(path), path);
}

// Rebuilds a model from a checkpoint (ablation switches may be overridden afterwards).
template <typename T>
Model<T> model_from_checkpoint(const Checkpoint<T>& ck) {
    Model<T> m(ck.model);
    load_parameters(m, ck.params);
    return m;
}

}  // namespace mal
