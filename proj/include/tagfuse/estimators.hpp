#pragma once

/** \file estimators.hpp
 *  \brief Base tag relevance estimators: neighbor voting (single feature and
 *         early fused), tag position, semantic field, and KDE tag ranking.
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tagfuse/collection.hpp"
#include "tagfuse/common.hpp"
#include "tagfuse/neighbors.hpp"

namespace tagfuse {

/**
 * \brief Scores of one estimator for one tag over its candidate set.
 *
 * The candidate set is the images labeled with the tag in the scored
 * collection; entries are keyed (and therefore ordered) by image id.
 */
struct ScoreTable {
    std::string estimator;
    std::string tag;
    std::map<std::string, double> scores;
    std::map<std::string, std::string> meta;

    std::size_t size() const { return scores.size(); }
    bool operator==(const ScoreTable&) const = default;
};

/// The relevance formula itself: votes/k - |S_w|/|S|.
inline double neighbor_vote_value(std::size_t votes, std::size_t k, std::size_t tag_count, std::size_t collection_size) {
    if (collection_size == 0) throw Error("neighbor_vote: empty collection");
    if (k == 0) throw Error("neighbor_vote: k must be positive");
    return static_cast<double>(votes) / static_cast<double>(k) -
           static_cast<double>(tag_count) / static_cast<double>(collection_size);
}

/// Neighbors of nl (from source) carrying the tag.
inline std::size_t count_votes(const Collection& source, const NeighborList& nl, const std::string& tag) {
    auto members = source.indices_with_tag(tag);
    std::size_t votes = 0;
    for (const auto& e : nl.entries)
        if (std::binary_search(members.begin(), members.end(), e.index)) ++votes;
    return votes;
}

/**
 * \brief Neighbor voting relevance of a tag given a neighbor list.
 *
 * The denominator is the requested k even when fewer neighbors exist.
 */
inline double neighbor_vote(const Collection& source, const NeighborList& nl, const std::string& tag, std::size_t k) {
    if (source.size() == 0) throw Error("neighbor_vote: empty collection");
    if (nl.entries.size() > k) throw Error("neighbor_vote: neighbor list longer than k");
    return neighbor_vote_value(count_votes(source, nl, tag), k, source.tag_count(tag), source.size());
}

/// Neighbor voting over the neighbors retrieved by the combined distance.
inline double early_fused_score(const Collection& source, const Query& q, const std::string& tag,
                                const CombinedDistance& metric, std::size_t k) {
    if (!metric.weights().on_simplex()) throw Error("early_fused_score: weights are not on the simplex");
    return neighbor_vote(source, knn(source, metric, q, k), tag, k);
}

/// 1 - (pos - 1) / T with pos 1-based.
inline double tag_position_score(const ImageRecord& rec, const std::string& tag) {
    auto it = std::find(rec.tags.begin(), rec.tags.end(), tag);
    if (it == rec.tags.end()) throw Error("tag_position_score: image " + rec.image_id + " is not labeled " + tag);
    const auto pos = static_cast<double>(it - rec.tags.begin());
    return 1.0 - pos / static_cast<double>(rec.tags.size());
}

/**
 * \brief Tag-to-tag similarity from co-occurrence, exp(-NGD).
 *
 * NGD(w,t) = (max(log f_w, log f_t) - log f_wt) / (log N - min(log f_w, log f_t)).
 */
class TagSimilarityModel {
public:
    TagSimilarityModel() = default;

    TagSimilarityModel(std::size_t n_images, std::unordered_map<std::string, std::size_t> freq,
                       std::map<std::pair<std::string, std::string>, std::size_t> cooc, std::size_t min_count)
        : n_images_(n_images), min_count_(min_count), freq_(std::move(freq)) {
        for (auto& [key, count] : cooc) cooc_[ordered(key.first, key.second)] += count;
    }

    double similarity(const std::string& w, const std::string& t) const {
        if (w == t) return 1.0;
        const std::size_t fw = frequency(w);
        const std::size_t ft = frequency(t);
        if (fw == 0 || ft == 0 || fw < min_count_ || ft < min_count_) return 0.0;
        auto it = cooc_.find(ordered(w, t));
        if (it == cooc_.end() || it->second == 0) return 0.0;
        const double lw = std::log(static_cast<double>(fw));
        const double lt = std::log(static_cast<double>(ft));
        const double denom = std::log(static_cast<double>(n_images_)) - std::min(lw, lt);
        if (!(denom > 0.0)) return 1.0;  // both tags are on every image
        const double ngd = (std::max(lw, lt) - std::log(static_cast<double>(it->second))) / denom;
        return std::exp(-ngd);
    }

    std::size_t frequency(const std::string& tag) const {
        auto it = freq_.find(tag);
        return it == freq_.end() ? 0 : it->second;
    }

private:
    static std::pair<std::string, std::string> ordered(const std::string& a, const std::string& b) {
        return a < b ? std::make_pair(a, b) : std::make_pair(b, a);
    }

    std::size_t n_images_ = 0;
    std::size_t min_count_ = 0;
    std::unordered_map<std::string, std::size_t> freq_;
    std::map<std::pair<std::string, std::string>, std::size_t> cooc_;
};

inline TagSimilarityModel build_tag_similarity(const Collection& c, std::size_t min_count) {
    if (c.size() < 2) throw Error("build_tag_similarity: need at least 2 images");
    std::unordered_map<std::string, std::size_t> freq;
    std::map<std::pair<std::string, std::string>, std::size_t> cooc;
    for (const auto& [tag, members] : c.tag_index()) freq[tag] = members.size();
    for (const auto& rec : c.images()) {
        for (std::size_t a = 0; a < rec.tags.size(); ++a)
            for (std::size_t b = a + 1; b < rec.tags.size(); ++b) {
                const auto& x = rec.tags[a];
                const auto& y = rec.tags[b];
                ++cooc[x < y ? std::make_pair(x, y) : std::make_pair(y, x)];
            }
    }
    return {c.size(), std::move(freq), std::move(cooc), min_count};
}

/// Mean similarity of the tag to the image's other tags; 0 for a lone tag.
inline double semantic_field_score(const ImageRecord& rec, const std::string& tag, const TagSimilarityModel& model) {
    if (std::find(rec.tags.begin(), rec.tags.end(), tag) == rec.tags.end())
        throw Error("semantic_field_score: image " + rec.image_id + " is not labeled " + tag);
    if (rec.tags.size() == 1) return 0.0;
    double sum = 0.0;
    for (const auto& other : rec.tags)
        if (other != tag) sum += model.similarity(tag, other);
    return sum / static_cast<double>(rec.tags.size() - 1);
}

// ---------------------------------------------------------------------------
// KDE tag ranking
// ---------------------------------------------------------------------------

inline constexpr std::size_t kDefaultKdeSampleCap = 500;

/**
 * \brief Median L1 distance over up to sample_cap random pairs of S_w.
 *
 * Falls back to 1 when S_w has fewer than two images or the median is 0.
 */
inline double kde_bandwidth(const Collection& source, const std::string& tag, const std::string& feature,
                            std::size_t sample_cap, std::uint64_t seed) {
    const auto& fm = source.feature(feature);
    auto members = source.indices_with_tag(tag);
    if (members.size() < 2) return 1.0;
    Rng rng(seed);
    std::vector<double> d;
    const std::size_t n_pairs = std::max<std::size_t>(sample_cap, 1);
    d.reserve(n_pairs);
    while (d.size() < n_pairs) {
        const auto a = members[rng.below(members.size())];
        const auto b = members[rng.below(members.size())];
        if (a == b) continue;
        d.push_back(l1_distance(fm.row(a), fm.row(b)));
    }
    const double m = median(std::move(d));
    return m > 0.0 ? m : 1.0;
}

/**
 * \brief Gaussian-kernel density of the query among the tag's images.
 *
 * (1/n) sum exp(-d^2 / sigma^2) over a seeded sample of at most sample_cap
 * images of S_w (the query itself excluded). A non-positive sigma selects
 * kde_bandwidth().
 */
inline double tag_ranking_kde_score(const Collection& source, const Query& q, const std::string& tag,
                                    const std::string& feature, double sigma, std::size_t sample_cap, std::uint64_t seed) {
    const auto& fm = source.feature(feature);
    const auto excluded = source.index_of(q.id);
    std::vector<std::size_t> members;
    for (std::size_t i : source.indices_with_tag(tag))
        if (!excluded || i != *excluded) members.push_back(i);
    if (members.empty()) throw Error("tag_ranking_kde_score: no other image is labeled " + tag);
    if (sample_cap == 0) throw Error("tag_ranking_kde_score: sample_cap must be positive");
    if (members.size() > sample_cap) {
        Rng rng(derive_seed(seed, "kde-sample"));
        rng.shuffle(members);
        members.resize(sample_cap);
    }
    if (!(sigma > 0.0)) sigma = kde_bandwidth(source, tag, feature, sample_cap, derive_seed(seed, "kde-bandwidth"));
    const auto qv = q.vector(feature);
    double sum = 0.0;
    for (std::size_t i : members) {
        const double d = l1_distance(qv, fm.row(i));
        sum += std::exp(-(d * d) / (sigma * sigma));
    }
    return sum / static_cast<double>(members.size());
}

}  // namespace tagfuse
