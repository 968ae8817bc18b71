#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mal/core/autodiff.hpp"
#include "mal/core/rng.hpp"
#include "mal/model/model.hpp"

namespace mal {

template <typename T>
struct ContextSensitive {
    ad::Var<T> embeddings;   // x'' per support item (n x d)
    ad::Var<T> final_state;  // backward LSTM hidden state after the full pass (1 x enc_hidden)
};

// Random visitation order for the forward encoder LSTM, fixed per episode seed.
inline std::vector<std::size_t> visitation_order(std::size_t n, std::uint64_t episode_seed) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(episode_seed, 0x6f726472ULL));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

template <typename T>
Tensor<T> feature_matrix(const std::vector<Item>& items, std::size_t dim) {
    Tensor<T> x(items.size(), dim);
    for (std::size_t i = 0; i < items.size(); ++i) {
        MAL_REQUIRE(items[i].features.size() == dim, "item feature length does not match the encoder input");
        for (std::size_t j = 0; j < dim; ++j) x(i, j) = static_cast<T>(items[i].features[j]);
    }
    return x;
}

// Conv trunk up to the flattened feature map (n x filters*7*7 for 28x28 input).
template <typename T>
ad::Var<T> conv_feature_map(ad::Tape<T>& tape, const Model<T>& m, ad::Var<T> images) {
    const auto& p = m.params();
    const T slope = static_cast<T>(m.config().leaky_slope);
    auto layer = [&](const LinearRef& l, const ad::ConvGeometry& g, ad::Var<T> x) {
        return ad::leaky_relu(ad::wn_conv2d(x, tape.param(p, l.v), tape.param(p, l.g), tape.param(p, l.b), g), slope);
    };
    auto x = layer(m.conv.l1, m.conv.g1, images);
    x = layer(m.conv.l2, m.conv.g2, x);
    return layer(m.conv.l3, m.conv.g3, x);
}

// x' for every item; independent of the other items.
template <typename T>
ad::Var<T> encode_context_free(ad::Tape<T>& tape, const Model<T>& m, const std::vector<Item>& items) {
    const auto& cfg = m.config();
    MAL_REQUIRE(!items.empty(), "encode_context_free: no items");
    const T slope = static_cast<T>(cfg.leaky_slope);
    switch (cfg.encoder) {
        case EncoderKind::mlp: {
            auto x = tape.constant(feature_matrix<T>(items, cfg.input_dim));
            auto h = ad::leaky_relu(m.linear(tape, m.mlp1, x), slope);
            return ad::leaky_relu(m.linear(tape, m.mlp2, h), slope);
        }
        case EncoderKind::conv: {
            auto x = tape.constant(feature_matrix<T>(items, cfg.image_side * cfg.image_side));
            return m.linear(tape, m.conv.fc, conv_feature_map(tape, m, x));
        }
        case EncoderKind::lookup: {
            std::vector<std::size_t> rows;
            rows.reserve(items.size());
            for (const auto& it : items) {
                if (it.id < 0 || static_cast<std::size_t>(it.id) >= cfg.num_ids) throw MissingEmbedding(it.id);
                rows.push_back(static_cast<std::size_t>(it.id));
            }
            return ad::gather_rows(tape.param(m.params(), m.lookup), std::move(rows));
        }
    }
    throw ContractViolation("encode_context_free: unknown encoder");
}

// x''_i = x'_i + W_e [fwd_i; bwd_i]. The forward LSTM visits items in `order`;
// the backward LSTM reads (x'_i, fwd_i) in reverse of that order.
template <typename T>
ContextSensitive<T> encode_context_sensitive(ad::Tape<T>& tape, const Model<T>& m, ad::Var<T> xprime,
                                             const std::vector<std::size_t>& order) {
    const std::size_t n = xprime.rows();
    MAL_REQUIRE(n > 0, "encode_context_sensitive: empty support set");
    MAL_REQUIRE(order.size() == n, "encode_context_sensitive: order must cover every support item");
    const std::size_t he = m.config().enc_hidden;

    std::vector<ad::Var<T>> fwd(n), bwd(n), rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = ad::gather_rows(xprime, {i});

    auto h = m.zeros(tape, 1, he);
    auto c = m.zeros(tape, 1, he);
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[k];
        std::tie(h, c) = m.lstm(tape, m.enc_fwd, h, c, rows[i]);
        fwd[i] = h;
    }
    h = m.zeros(tape, 1, he);
    c = m.zeros(tape, 1, he);
    for (std::size_t k = n; k-- > 0;) {
        const std::size_t i = order[k];
        std::tie(h, c) = m.lstm(tape, m.enc_bwd, h, c, ad::concat_cols<T>({rows[i], fwd[i]}));
        bwd[i] = h;
    }

    ContextSensitive<T> out;
    out.final_state = h;
    if (!m.config().use_ctx_encoder) {
        out.embeddings = xprime;
        return out;
    }
    std::vector<ad::Var<T>> states(n);
    for (std::size_t i = 0; i < n; ++i) states[i] = ad::concat_cols<T>({fwd[i], bwd[i]});
    out.embeddings = ad::add(xprime, m.linear(tape, m.enc_out, ad::concat_rows(states)));
    return out;
}

// Pretrained lookup rows: "id,v1,...,vd" lines after a header line.
struct EmbeddingTable {
    std::size_t dim = 0;
    std::unordered_map<std::int64_t, std::vector<double>> rows;
};

inline EmbeddingTable read_embedding_table(std::istream& in, const std::string& source = "<embeddings>") {
    EmbeddingTable table;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw ParseError(source, 1, "missing header line");
    ++lineno;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string f;
        while (std::getline(ss, f, ',')) fields.push_back(f);
        if (fields.size() < 2) throw ParseError(source, lineno, "expected id followed by at least one value");
        std::int64_t id = 0;
        try {
            id = std::stoll(fields[0]);
        } catch (const std::exception&) {
            throw ParseError(source, lineno, "bad id '" + fields[0] + "'");
        }
        std::vector<double> v;
        for (std::size_t k = 1; k < fields.size(); ++k) {
            try {
                v.push_back(std::stod(fields[k]));
            } catch (const std::exception&) {
                throw ParseError(source, lineno, "bad value '" + fields[k] + "'");
            }
        }
        if (table.dim == 0) table.dim = v.size();
        if (v.size() != table.dim)
            throw ParseError(source, lineno,
                             "row has " + std::to_string(v.size()) + " values, expected " + std::to_string(table.dim));
        if (!table.rows.emplace(id, std::move(v)).second) throw ParseError(source, lineno, "duplicate id");
    }
    return table;
}

inline void write_embedding_table(std::ostream& out, const EmbeddingTable& table) {
    out << "id";
    for (std::size_t k = 1; k <= table.dim; ++k) out << ",v" << k;
    out << '\n';
    std::vector<std::int64_t> ids;
    for (const auto& [id, _] : table.rows) ids.push_back(id);
    std::sort(ids.begin(), ids.end());
    out.precision(17);
    for (auto id : ids) {
        out << id;
        for (double v : table.rows.at(id)) out << ',' << v;
        out << '\n';
    }
}

// Copies pretrained rows into the lookup table; rows absent from the file keep their random init.
template <typename T>
void load_pretrained_rows(Model<T>& m, const EmbeddingTable& table) {
    MAL_REQUIRE(m.config().encoder == EncoderKind::lookup, "pretrained rows need a lookup encoder");
    auto& t = m.params()[m.lookup];
    if (table.dim != t.cols())
        throw ConfigError("embeddings", "table dimension " + std::to_string(table.dim) + " != embed_dim " +
                                            std::to_string(t.cols()));
    for (const auto& [id, v] : table.rows) {
        if (id < 0 || static_cast<std::size_t>(id) >= t.rows()) continue;
        for (std::size_t k = 0; k < v.size(); ++k) t(static_cast<std::size_t>(id), k) = static_cast<T>(v[k]);
    }
}

}  // namespace mal
