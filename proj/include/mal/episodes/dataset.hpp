#pragma once

// File-backed item stores: class-directory image trees (PGM) and
// userId,movieId,rating,timestamp rating tables.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mal/core/errors.hpp"
#include "mal/core/rng.hpp"
#include "mal/episodes/synthetic.hpp"
#include "mal/episodes/task.hpp"

namespace mal {

enum class DatasetFormat { images, ratings };

inline DatasetFormat parse_dataset_format(const std::string& tag) {
    if (tag == "images") return DatasetFormat::images;
    if (tag == "ratings") return DatasetFormat::ratings;
    throw ConfigError("format", "unknown dataset format '" + tag + "'");
}

struct GrayImage {
    std::size_t width = 0, height = 0;
    std::vector<float> pixels;  // row-major, scaled to [0, 1]
};

namespace detail {

inline std::string pgm_token(std::istream& in) {
    std::string tok;
    char ch;
    while (in.get(ch)) {
        if (ch == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(ch);
    }
    return tok;
}

}  // namespace detail

// Binary (P5) or ASCII (P2) portable graymap.
inline GrayImage read_pgm(std::istream& in, const std::string& source) {
    const auto magic = detail::pgm_token(in);
    if (magic != "P5" && magic != "P2") throw ParseError(source, 1, "not a PGM file (magic '" + magic + "')");
    GrayImage img;
    std::size_t maxval = 0;
    try {
        img.width = std::stoul(detail::pgm_token(in));
        img.height = std::stoul(detail::pgm_token(in));
        maxval = std::stoul(detail::pgm_token(in));
    } catch (const std::exception&) {
        throw ParseError(source, 1, "bad PGM header");
    }
    if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535)
        throw ParseError(source, 1, "bad PGM header values");
    const std::size_t n = img.width * img.height;
    img.pixels.resize(n);
    const double scale = 1.0 / static_cast<double>(maxval);
    if (magic == "P5") {
        const std::size_t bytes = maxval < 256 ? 1 : 2;
        std::vector<unsigned char> raw(n * bytes);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw ParseError(source, 1, "truncated pixel data");
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t v = bytes == 1 ? raw[i] : (std::size_t{raw[2 * i]} << 8) | raw[2 * i + 1];
            img.pixels[i] = static_cast<float>(static_cast<double>(std::min(v, maxval)) * scale);
        }
    } else {
        for (std::size_t i = 0; i < n; ++i) {
            const auto tok = detail::pgm_token(in);
            if (tok.empty()) throw ParseError(source, 1, "truncated pixel data");
            img.pixels[i] = static_cast<float>(static_cast<double>(std::min<std::size_t>(std::stoul(tok), maxval)) * scale);
        }
    }
    return img;
}

struct ImageClass {
    std::string name;
    std::vector<std::vector<float>> images;
};

struct ImageStore {
    std::size_t side = 0;
    std::vector<ImageClass> classes;
};

inline std::vector<std::string> read_class_list(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("class_list", "cannot open " + path.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        if (!line.empty() && line.front() != '#') out.push_back(line);
    }
    return out;
}

// root/<class>/<image>.pgm; `only` restricts to a class list (a train or test split).
inline ImageStore load_image_classes(const std::filesystem::path& root, const std::vector<std::string>& only = {}) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw ConfigError("data_dir", "not a directory: " + root.string());
    std::vector<fs::path> dirs;
    if (only.empty()) {
        for (const auto& e : fs::directory_iterator(root))
            if (e.is_directory()) dirs.push_back(e.path());
        std::sort(dirs.begin(), dirs.end());
    } else {
        for (const auto& name : only) {
            if (!fs::is_directory(root / name)) throw ConfigError("class_list", "missing class directory " + name);
            dirs.push_back(root / name);
        }
    }
    ImageStore store;
    for (const auto& dir : dirs) {
        ImageClass cls;
        cls.name = dir.filename().string();
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".pgm") files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            std::ifstream in(f, std::ios::binary);
            auto img = read_pgm(in, f.string());
            if (img.width != img.height) throw ParseError(f.string(), 1, "images must be square");
            if (store.side == 0) store.side = img.width;
            if (img.width != store.side) throw ParseError(f.string(), 1, "image size differs from the rest of the store");
            cls.images.push_back(std::move(img.pixels));
        }
        if (!cls.images.empty()) store.classes.push_back(std::move(cls));
    }
    if (store.classes.empty()) throw EmptyStore(root.string());
    return store;
}

// N classes sampled from the store; class indices follow the (random) sampling order.
inline Episode gen_classification_episode(const TaskSpec& spec, const ImageStore& store, std::uint64_t seed) {
    MAL_REQUIRE(spec.kind == TaskKind::classification, "classification generator needs a classification spec");
    spec.validate();
    if (store.classes.size() < spec.num_classes) throw GenerationError("store has fewer classes than the task needs");
    Rng rng(derive_seed(seed, 0x696d67ULL));
    const auto picked = detail::sample_without_replacement(store.classes.size(), spec.num_classes, rng);
    const std::size_t per = spec.support_per_class + spec.eval_per_class;
    Episode ep;
    ep.spec = spec;
    ep.seed = seed;
    for (std::size_t c = 0; c < picked.size(); ++c) {
        const auto& cls = store.classes[picked[c]];
        if (cls.images.size() < per)
            throw GenerationError("class '" + cls.name + "' has " + std::to_string(cls.images.size()) +
                                  " items, needs " + std::to_string(per));
        const auto chosen = detail::sample_without_replacement(cls.images.size(), per, rng);
        for (std::size_t k = 0; k < per; ++k) {
            Item it;
            it.features = cls.images[chosen[k]];
            it.label = Label::of_class(static_cast<int>(c));
            (k < spec.support_per_class ? ep.support : ep.eval).push_back(std::move(it));
        }
    }
    std::shuffle(ep.support.begin(), ep.support.end(), rng);
    std::shuffle(ep.eval.begin(), ep.eval.end(), rng);
    detail::assign_ids(ep);
    return ep;
}

// Ratings keyed by dense movie rows (the lookup-table index); movie_ids maps rows back.
struct RatingsStore {
    std::vector<RatingRecord> records;  // item = dense row
    std::vector<std::int64_t> movie_ids;
    std::map<std::int64_t, std::vector<std::pair<std::size_t, double>>> by_user;

    std::size_t num_movies() const { return movie_ids.size(); }
};

struct RatingsFilter {
    std::size_t top_movies = 0;  // 0 keeps all
    std::size_t top_users = 0;
};

namespace detail {

// Ids with the most records, ties to the smaller id.
inline std::vector<std::int64_t> top_by_count(const std::map<std::int64_t, std::size_t>& counts, std::size_t k) {
    std::vector<std::pair<std::int64_t, std::size_t>> v(counts.begin(), counts.end());
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (k > 0 && v.size() > k) v.resize(k);
    std::vector<std::int64_t> out;
    for (const auto& [id, _] : v) out.push_back(id);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace detail

inline std::vector<RatingRecord> read_ratings_csv(std::istream& in, const std::string& source,
                                                  const RatingScale& scale = {}) {
    std::vector<RatingRecord> out;
    std::string line;
    std::size_t lineno = 0;
    if (!std::getline(in, line)) throw EmptyStore(source);
    ++lineno;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string tok;
        while (std::getline(ss, tok, ',')) f.push_back(tok);
        if (f.size() < 3 || f.size() > 4) throw ParseError(source, lineno, "expected userId,movieId,rating[,timestamp]");
        RatingRecord r;
        try {
            std::size_t used = 0;
            r.user = std::stoll(f[0], &used);
            if (used != f[0].size()) throw std::invalid_argument("user");
            r.item = std::stoll(f[1], &used);
            if (used != f[1].size()) throw std::invalid_argument("item");
            r.rating = std::stod(f[2], &used);
            if (used != f[2].size()) throw std::invalid_argument("rating");
        } catch (const std::exception&) {
            throw ParseError(source, lineno, "malformed field in '" + line + "'");
        }
        if (!scale.valid(r.rating)) throw ParseError(source, lineno, "rating off the scale");
        out.push_back(r);
    }
    if (out.empty()) throw EmptyStore(source);
    return out;
}

// Keeps the top-M movies by rating count, then the top-U users among what remains.
inline RatingsStore build_ratings_store(const std::vector<RatingRecord>& raw, const RatingsFilter& filter) {
    if (raw.empty()) throw EmptyStore("ratings");
    std::map<std::int64_t, std::size_t> movie_counts;
    for (const auto& r : raw) ++movie_counts[r.item];
    const auto movies = detail::top_by_count(movie_counts, filter.top_movies);
    std::map<std::int64_t, std::size_t> row_of;
    for (std::size_t k = 0; k < movies.size(); ++k) row_of[movies[k]] = k;

    std::map<std::int64_t, std::size_t> user_counts;
    for (const auto& r : raw)
        if (row_of.count(r.item)) ++user_counts[r.user];
    const auto users = detail::top_by_count(user_counts, filter.top_users);

    RatingsStore store;
    store.movie_ids = movies;
    for (const auto& r : raw) {
        auto it = row_of.find(r.item);
        if (it == row_of.end() || !std::binary_search(users.begin(), users.end(), r.user)) continue;
        store.records.push_back({r.user, static_cast<std::int64_t>(it->second), r.rating});
        store.by_user[r.user].emplace_back(it->second, r.rating);
    }
    if (store.records.empty()) throw EmptyStore("ratings after filtering");
    return store;
}

inline RatingsStore load_ratings_store(const std::filesystem::path& path, const RatingsFilter& filter,
                                       const RatingScale& scale = {}) {
    std::ifstream in(path);
    if (!in) throw ConfigError("data_dir", "cannot open " + path.string());
    return build_ratings_store(read_ratings_csv(in, path.string(), scale), filter);
}

// One user drawn from `users` (all store users when empty) with enough ratings.
inline Episode gen_ratings_episode(const TaskSpec& spec, const RatingsStore& store, std::uint64_t seed,
                                   const std::vector<std::int64_t>& users = {}) {
    MAL_REQUIRE(spec.kind == TaskKind::regression, "ratings generator needs a regression spec");
    spec.validate();
    const std::size_t need = spec.support_size + spec.eval_size;
    std::vector<std::int64_t> eligible;
    if (users.empty()) {
        for (const auto& [u, rs] : store.by_user)
            if (rs.size() >= need) eligible.push_back(u);
    } else {
        for (auto u : users) {
            auto it = store.by_user.find(u);
            if (it != store.by_user.end() && it->second.size() >= need) eligible.push_back(u);
        }
    }
    if (eligible.empty()) throw GenerationError("no user has " + std::to_string(need) + " ratings");
    Rng rng(derive_seed(seed, 0x75737273ULL));
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    const auto& rs = store.by_user.at(eligible[pick(rng)]);
    const auto chosen = detail::sample_without_replacement(rs.size(), need, rng);
    Episode ep;
    ep.spec = spec;
    ep.seed = seed;
    for (std::size_t k = 0; k < need; ++k) {
        Item it;
        it.id = static_cast<std::int64_t>(rs[chosen[k]].first);
        it.label = Label::of_rating(rs[chosen[k]].second);
        (k < spec.support_size ? ep.support : ep.eval).push_back(std::move(it));
    }
    return ep;
}

}  // namespace mal
