#pragma once

/** \file collection.hpp
 *  \brief Tagged image collections: loading, validation, indexing, and a
 *         seeded synthetic generator with planted ground truth.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tagfuse/common.hpp"

namespace tagfuse {

/** \brief One image: identifier, owner, and its tags in user order. */
struct ImageRecord {
    std::string image_id;
    std::string user_id;
    std::vector<std::string> tags;  ///< order is significant (tag position)

    bool operator==(const ImageRecord&) const = default;
};

/** \brief Dense row-major feature vectors, one row per image of the owning collection. */
struct FeatureMatrix {
    std::string name;
    std::size_t dim = 0;
    std::vector<double> data;

    std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }

    bool operator==(const FeatureMatrix&) const = default;
};

/// Tag -> ascending indices of the images carrying it.
using TagIndex = std::map<std::string, std::vector<std::size_t>>;

inline TagIndex build_tag_index(const std::vector<ImageRecord>& images) {
    TagIndex index;
    for (std::size_t i = 0; i < images.size(); ++i)
        for (const auto& t : images[i].tags) index[t].push_back(i);
    return index;
}

/**
 * \brief Immutable, validated set of tagged images with per-feature matrices.
 *
 * Image order is the construction order; everything that has to be
 * canonical (neighbor ties, rankings) goes through id_rank() instead.
 */
class Collection {
public:
    Collection() = default;

    /// Validates and indexes. Feature rows must already be in image order.
    static Collection create(std::vector<ImageRecord> images, std::vector<FeatureMatrix> features) {
        Collection c;
        c.images_ = std::move(images);
        for (std::size_t i = 0; i < c.images_.size(); ++i) {
            auto& rec = c.images_[i];
            if (rec.image_id.empty()) throw Error("image at position " + std::to_string(i) + " has an empty id");
            if (!c.by_id_.emplace(rec.image_id, i).second) throw Error("duplicate image id: " + rec.image_id);
            std::unordered_set<std::string> seen;
            for (const auto& t : rec.tags) {
                if (t.empty()) throw Error("empty tag on image " + rec.image_id);
                if (!seen.insert(t).second) throw Error("duplicate tag '" + t + "' on image " + rec.image_id);
            }
        }
        for (auto& fm : features) {
            if (fm.dim == 0) throw Error("feature " + fm.name + " has dimension 0");
            if (fm.data.size() != fm.dim * c.images_.size())
                throw Error("feature " + fm.name + " does not have exactly one row per image");
            for (double v : fm.data)
                if (!std::isfinite(v)) throw Error("feature " + fm.name + " has a non-finite component");
            const std::string name = fm.name;
            if (!c.features_.emplace(name, std::move(fm)).second) throw Error("duplicate feature name: " + name);
        }
        c.tag_index_ = build_tag_index(c.images_);

        std::vector<std::size_t> order(c.images_.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return c.images_[a].image_id < c.images_[b].image_id; });
        c.id_rank_.resize(order.size());
        for (std::size_t r = 0; r < order.size(); ++r) c.id_rank_[order[r]] = r;
        return c;
    }

    std::size_t size() const { return images_.size(); }
    const std::vector<ImageRecord>& images() const { return images_; }
    const ImageRecord& image(std::size_t i) const { return images_.at(i); }
    const std::string& id(std::size_t i) const { return images_.at(i).image_id; }

    std::optional<std::size_t> index_of(const std::string& image_id) const {
        auto it = by_id_.find(image_id);
        if (it == by_id_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t require_index(const std::string& image_id) const {
        auto idx = index_of(image_id);
        if (!idx) throw Error("unknown image id: " + image_id);
        return *idx;
    }

    /// Position of image i in ascending image-id order.
    std::size_t id_rank(std::size_t i) const { return id_rank_[i]; }

    bool has_feature(const std::string& name) const { return features_.count(name) != 0; }

    const FeatureMatrix& feature(const std::string& name) const {
        auto it = features_.find(name);
        if (it == features_.end()) throw Error("unknown feature: " + name);
        return it->second;
    }

    std::vector<std::string> feature_names() const {
        std::vector<std::string> out;
        for (const auto& [name, fm] : features_) out.push_back(name);
        return out;
    }

    const std::map<std::string, FeatureMatrix>& features() const { return features_; }
    const TagIndex& tag_index() const { return tag_index_; }

    /// Ascending indices of images labeled with the tag; empty for unseen tags.
    std::span<const std::size_t> indices_with_tag(const std::string& tag) const {
        auto it = tag_index_.find(tag);
        if (it == tag_index_.end()) return {};
        return it->second;
    }

    std::size_t tag_count(const std::string& tag) const { return indices_with_tag(tag).size(); }

    bool has_tag(std::size_t image, const std::string& tag) const {
        auto idx = indices_with_tag(tag);
        return std::binary_search(idx.begin(), idx.end(), image);
    }

    bool operator==(const Collection& other) const {
        return images_ == other.images_ && features_ == other.features_;
    }

private:
    std::vector<ImageRecord> images_;
    std::map<std::string, FeatureMatrix> features_;
    std::unordered_map<std::string, std::size_t> by_id_;
    TagIndex tag_index_;
    std::vector<std::size_t> id_rank_;
};

/// S_w as a set of image ids.
inline std::set<std::string> images_with_tag(const Collection& c, const std::string& tag) {
    std::set<std::string> out;
    for (std::size_t i : c.indices_with_tag(tag)) out.insert(c.id(i));
    return out;
}

/// |S_w| / |S|.
inline double tag_prior(const Collection& c, const std::string& tag) {
    if (c.size() == 0) throw Error("tag_prior: empty collection");
    return static_cast<double>(c.tag_count(tag)) / static_cast<double>(c.size());
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

namespace detail {

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    return out;
}

inline std::vector<ImageRecord> read_tags_file(const std::string& path) {
    auto in = open_input(path);
    std::vector<ImageRecord> images;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        auto fields = split(line, '\t');
        if (fields.size() != 3)
            throw ParseError(path, lineno, "expected image_id<TAB>user_id<TAB>tags, got " +
                                               std::to_string(fields.size()) + " fields");
        ImageRecord rec;
        rec.image_id = std::string(fields[0]);
        rec.user_id = std::string(fields[1]);
        if (rec.image_id.empty()) throw ParseError(path, lineno, "empty image id");
        std::unordered_set<std::string> seen;
        for (auto tok : split_ws(fields[2])) {
            std::string tag = fold_tag(tok);
            if (!seen.insert(tag).second)
                throw ParseError(path, lineno, "duplicate tag '" + tag + "' on image " + rec.image_id);
            rec.tags.push_back(std::move(tag));
        }
        images.push_back(std::move(rec));
    }
    return images;
}

inline FeatureMatrix read_feature_file(const std::string& path, const std::vector<ImageRecord>& images,
                                       const std::unordered_map<std::string, std::size_t>& by_id) {
    auto in = open_input(path);
    std::string line;
    std::size_t lineno = 0;
    FeatureMatrix fm;
    bool have_header = false;
    std::vector<char> filled(images.size(), 0);
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!have_header) {
            auto h = split(line, '\t');
            if (h.size() != 3 || h[0] != "#feature") throw ParseError(path, lineno, "expected #feature<TAB>name<TAB>dim header");
            fm.name = std::string(h[1]);
            if (fm.name.empty()) throw ParseError(path, lineno, "empty feature name");
            if (!parse_int(h[2], fm.dim) || fm.dim == 0) throw ParseError(path, lineno, "bad dimension '" + std::string(h[2]) + "'");
            fm.data.assign(images.size() * fm.dim, 0.0);
            have_header = true;
            continue;
        }
        if (line.front() == '#') continue;
        auto fields = split(line, '\t');
        if (fields.size() != 2) throw ParseError(path, lineno, "expected image_id<TAB>values");
        const std::string id(fields[0]);
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ParseError(path, lineno, "image id " + id + " is not in the tags file");
        if (filled[it->second]) throw ParseError(path, lineno, "duplicate row for image id " + id);
        auto values = split(fields[1], ',');
        if (values.size() != fm.dim)
            throw ParseError(path, lineno, "image id " + id + " has " + std::to_string(values.size()) +
                                               " components, expected " + std::to_string(fm.dim));
        double* row = fm.data.data() + it->second * fm.dim;
        for (std::size_t j = 0; j < fm.dim; ++j) {
            double v = 0.0;
            if (!parse_double(trim(values[j]), v))
                throw ParseError(path, lineno, "image id " + id + ": bad number '" + std::string(values[j]) + "'");
            if (!std::isfinite(v)) throw ParseError(path, lineno, "image id " + id + ": non-finite component");
            row[j] = v;
        }
        filled[it->second] = 1;
    }
    if (!have_header) throw ParseError(path, lineno, "missing #feature header");
    for (std::size_t i = 0; i < images.size(); ++i)
        if (!filled[i]) throw ParseError(path, lineno, "missing row for image id " + images[i].image_id);
    return fm;
}

}  // namespace detail

/**
 * \brief Load a tags file plus one file per feature space.
 *
 * Every error names the offending file and line (and image id where there is one).
 */
inline Collection load_collection(const std::string& tags_path, const std::vector<std::string>& feature_paths) {
    auto images = detail::read_tags_file(tags_path);
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < images.size(); ++i)
        if (!by_id.emplace(images[i].image_id, i).second)
            throw Error(tags_path + ": duplicate image id " + images[i].image_id);
    std::vector<FeatureMatrix> features;
    for (const auto& p : feature_paths) features.push_back(detail::read_feature_file(p, images, by_id));
    return Collection::create(std::move(images), std::move(features));
}

inline void write_tags_file(std::ostream& out, const Collection& c) {
    for (const auto& rec : c.images()) {
        out << rec.image_id << '\t' << rec.user_id << '\t';
        for (std::size_t j = 0; j < rec.tags.size(); ++j) out << (j ? " " : "") << rec.tags[j];
        out << '\n';
    }
}

inline void write_feature_file(std::ostream& out, const Collection& c, const std::string& name) {
    const auto& fm = c.feature(name);
    out << "#feature\t" << fm.name << '\t' << fm.dim << '\n';
    for (std::size_t i = 0; i < c.size(); ++i) {
        out << c.id(i) << '\t';
        auto row = fm.row(i);
        for (std::size_t j = 0; j < fm.dim; ++j) out << (j ? "," : "") << format_double(row[j]);
        out << '\n';
    }
}

inline void write_tags_file(const std::string& path, const Collection& c) {
    auto out = detail::open_output(path);
    write_tags_file(out, c);
}

inline void write_feature_file(const std::string& path, const Collection& c, const std::string& name) {
    auto out = detail::open_output(path);
    write_feature_file(out, c, name);
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/** \brief One generated feature space and the tags whose images it clusters. */
struct SyntheticFeature {
    std::string name;
    std::size_t dim = 16;
    std::vector<bool> informative;  ///< per tag; empty means informative for every tag
};

struct SyntheticConfig {
    std::size_t n_images = 2000;
    std::size_t n_tags = 20;
    std::size_t n_users = 200;
    std::vector<SyntheticFeature> features;
    double q_correct = 0.9;
    double q_incorrect = 0.05;
    double cluster_spread = 0.15;
    std::uint64_t seed = 1;
};

/// Features that split the tags into contiguous disjoint blocks, one block per feature.
inline std::vector<SyntheticFeature> block_features(std::vector<std::string> names, std::size_t dim, std::size_t n_tags) {
    std::vector<SyntheticFeature> out;
    const std::size_t m = names.size();
    for (std::size_t f = 0; f < m; ++f) {
        SyntheticFeature sf{std::move(names[f]), dim, std::vector<bool>(n_tags, false)};
        for (std::size_t t = 0; t < n_tags; ++t) sf.informative[t] = (t * m / std::max<std::size_t>(n_tags, 1)) == f;
        out.push_back(std::move(sf));
    }
    return out;
}

inline void validate(const SyntheticConfig& cfg) {
    if (cfg.n_images == 0) throw Error("synthetic config: n_images must be positive");
    if (cfg.n_tags == 0) throw Error("synthetic config: n_tags must be positive");
    if (cfg.n_users == 0) throw Error("synthetic config: n_users must be positive");
    if (cfg.features.empty()) throw Error("synthetic config: at least one feature is required");
    if (!(cfg.q_correct >= 0.0 && cfg.q_correct <= 1.0) || !(cfg.q_incorrect >= 0.0 && cfg.q_incorrect <= 1.0))
        throw Error("synthetic config: tagging probabilities must lie in [0,1]");
    if (!(cfg.q_correct > cfg.q_incorrect)) throw Error("synthetic config: q_correct must exceed q_incorrect");
    if (!(cfg.cluster_spread > 0.0)) throw Error("synthetic config: cluster_spread must be positive");
    std::set<std::string> names;
    for (const auto& f : cfg.features) {
        if (f.name.empty() || !names.insert(f.name).second) throw Error("synthetic config: feature names must be unique and non-empty");
        if (f.dim == 0) throw Error("synthetic config: feature " + f.name + " has dimension 0");
        if (!f.informative.empty() && f.informative.size() != cfg.n_tags)
            throw Error("synthetic config: feature " + f.name + " informativeness must list every tag");
    }
}

/// Zero-padded token so that lexicographic order matches numeric order.
inline std::string padded_name(const std::string& prefix, std::size_t value, std::size_t count) {
    std::size_t width = 1;
    for (std::size_t v = count > 0 ? count - 1 : 0; v >= 10; v /= 10) ++width;
    std::string digits = std::to_string(value);
    return prefix + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

struct SyntheticData {
    Collection collection;
    std::map<std::string, std::set<std::string>> ground_truth;  ///< tag -> truly relevant image ids
};

/**
 * \brief Generate a seeded collection with one planted concept per image.
 *
 * Each image belongs to one concept drawn uniformly. In a feature marked
 * informative for that concept its vector is the concept center plus
 * uniform noise of half-width cluster_spread; otherwise it is uniform noise
 * in the unit cube. The true tag is observed with probability q_correct and
 * every other tag with probability q_incorrect; observed tags are shuffled.
 */
inline SyntheticData generate_collection(const SyntheticConfig& cfg) {
    validate(cfg);
    Rng center_rng(derive_seed(cfg.seed, "centers"));
    Rng image_rng(derive_seed(cfg.seed, "images"));

    std::vector<std::string> tag_names(cfg.n_tags);
    for (std::size_t t = 0; t < cfg.n_tags; ++t) tag_names[t] = padded_name("tag", t, cfg.n_tags);

    // centers[f][t * dim + j]
    std::vector<std::vector<double>> centers(cfg.features.size());
    for (std::size_t f = 0; f < cfg.features.size(); ++f) {
        centers[f].resize(cfg.n_tags * cfg.features[f].dim);
        for (double& v : centers[f]) v = center_rng.uniform();
    }

    std::vector<ImageRecord> images(cfg.n_images);
    std::vector<FeatureMatrix> features;
    for (const auto& f : cfg.features) features.push_back({f.name, f.dim, std::vector<double>(cfg.n_images * f.dim)});

    SyntheticData out;
    for (const auto& t : tag_names) out.ground_truth[t];

    for (std::size_t i = 0; i < cfg.n_images; ++i) {
        auto& rec = images[i];
        rec.image_id = padded_name("img", i, cfg.n_images);
        rec.user_id = padded_name("user", static_cast<std::size_t>(image_rng.below(cfg.n_users)), cfg.n_users);
        const auto concept_id = static_cast<std::size_t>(image_rng.below(cfg.n_tags));
        out.ground_truth[tag_names[concept_id]].insert(rec.image_id);

        for (std::size_t f = 0; f < cfg.features.size(); ++f) {
            const auto& spec = cfg.features[f];
            const bool informative = spec.informative.empty() || spec.informative[concept_id];
            double* row = features[f].data.data() + i * spec.dim;
            const double* center = centers[f].data() + concept_id * spec.dim;
            for (std::size_t j = 0; j < spec.dim; ++j)
                row[j] = informative ? center[j] + cfg.cluster_spread * image_rng.uniform(-1.0, 1.0) : image_rng.uniform();
        }

        for (std::size_t t = 0; t < cfg.n_tags; ++t) {
            const double q = t == concept_id ? cfg.q_correct : cfg.q_incorrect;
            if (image_rng.bernoulli(q)) rec.tags.push_back(tag_names[t]);
        }
        image_rng.shuffle(rec.tags);
    }
    out.collection = Collection::create(std::move(images), std::move(features));
    return out;
}

/// Ground truth in qrels form: `tag<TAB>image_id<TAB>1`, tags and ids ascending.
inline void write_ground_truth(std::ostream& out, const std::map<std::string, std::set<std::string>>& gt) {
    for (const auto& [tag, ids] : gt)
        for (const auto& id : ids) out << tag << '\t' << id << "\t1\n";
}

}  // namespace tagfuse
