#pragma once

/** \file neighbors.hpp
 *  \brief Exact k-NN under per-feature L1 distance and under weighted
 *         combinations of normalized per-feature distances.
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "tagfuse/collection.hpp"
#include "tagfuse/common.hpp"

namespace tagfuse {

inline double l1_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw Error("l1_distance: dimension mismatch (" + std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += std::abs(a[j] - b[j]);
    return s;
}

/**
 * \brief Nonnegative fusion weights over named features or estimators.
 *
 * Constructed through normalized()/uniform()/one_hot(), which put the
 * weights on the probability simplex.
 */
struct WeightVector {
    std::vector<std::string> names;
    std::vector<double> weights;

    std::size_t size() const { return names.size(); }

    static WeightVector normalized(std::vector<std::string> names, std::vector<double> raw) {
        if (names.size() != raw.size()) throw Error("weight vector: names and weights differ in length");
        if (names.empty()) throw Error("weight vector: empty");
        double sum = 0.0;
        for (double w : raw) {
            if (!std::isfinite(w) || w < 0.0) throw Error("weight vector: weights must be finite and nonnegative");
            sum += w;
        }
        if (!(sum > 0.0)) throw Error("weight vector: weights sum to zero");
        // Input already on the simplex is kept bit-for-bit (weight files round-trip).
        if (std::abs(sum - 1.0) > 1e-12)
            for (double& w : raw) w /= sum;
        return {std::move(names), std::move(raw)};
    }

    static WeightVector uniform(std::vector<std::string> names) {
        std::vector<double> w(names.size(), 1.0);
        return normalized(std::move(names), std::move(w));
    }

    static WeightVector one_hot(std::vector<std::string> names, const std::string& active) {
        std::vector<double> w(names.size(), 0.0);
        auto it = std::find(names.begin(), names.end(), active);
        if (it == names.end()) throw Error("weight vector: unknown name " + active);
        w[static_cast<std::size_t>(it - names.begin())] = 1.0;
        return {std::move(names), std::move(w)};
    }

    double weight(const std::string& name) const {
        auto it = std::find(names.begin(), names.end(), name);
        if (it == names.end()) throw Error("weight vector: unknown name " + name);
        return weights[static_cast<std::size_t>(it - names.begin())];
    }

    bool on_simplex(double tol = 1e-9) const {
        double sum = 0.0;
        for (double w : weights) {
            if (w < 0.0) return false;
            sum += w;
        }
        return std::abs(sum - 1.0) <= tol;
    }

    bool operator==(const WeightVector&) const = default;
};

enum class Normalization { none, minmax, rankmax };

inline std::string to_string(Normalization n) {
    switch (n) {
        case Normalization::none: return "none";
        case Normalization::minmax: return "minmax";
        case Normalization::rankmax: return "rankmax";
    }
    return "none";
}

inline Normalization parse_normalization(const std::string& s) {
    if (s == "none") return Normalization::none;
    if (s == "minmax") return Normalization::minmax;
    if (s == "rankmax") return Normalization::rankmax;
    throw Error("unknown normalization: " + s);
}

/**
 * \brief Per-feature distance normalizer.
 *
 * minmax maps d to clamp((d - lower) / (upper - lower), 0, 1). rankmax is
 * query-relative and handled by CombinedDistance; it carries no state.
 */
struct DistanceNormalizer {
    Normalization mode = Normalization::none;
    double lower = 0.0;
    double upper = 1.0;

    double apply(double d) const {
        if (mode != Normalization::minmax) return d;
        return std::clamp((d - lower) / (upper - lower), 0.0, 1.0);
    }
};

inline constexpr double kMinmaxUpperPercentile = 0.995;

/// minmax normalizer with lower 0 and upper at the 99.5th percentile of the sample.
inline DistanceNormalizer minmax_from_sample(std::vector<double> distances) {
    const double upper = percentile(std::move(distances), kMinmaxUpperPercentile);
    if (!(upper > 0.0)) throw Error("calibrate_normalizer: degenerate upper bound (all sampled distances are zero)");
    return {Normalization::minmax, 0.0, upper};
}

inline DistanceNormalizer calibrate_normalizer(const Collection& c, const std::string& feature, Normalization mode,
                                               std::size_t sample_size, std::uint64_t seed) {
    const auto& fm = c.feature(feature);
    if (c.size() < 2) throw Error("calibrate_normalizer: need at least 2 images");
    if (mode != Normalization::minmax) return {mode, 0.0, 1.0};
    if (sample_size == 0) throw Error("calibrate_normalizer: sample_size must be positive");
    Rng rng(seed);
    std::vector<double> sample;
    sample.reserve(sample_size);
    while (sample.size() < sample_size) {
        const auto a = static_cast<std::size_t>(rng.below(c.size()));
        const auto b = static_cast<std::size_t>(rng.below(c.size()));
        if (a == b) continue;
        sample.push_back(l1_distance(fm.row(a), fm.row(b)));
    }
    try {
        return minmax_from_sample(std::move(sample));
    } catch (const Error&) {
        throw Error("calibrate_normalizer: degenerate upper bound for feature " + feature);
    }
}

using NormalizerMap = std::map<std::string, DistanceNormalizer>;

/// One normalizer per named feature, each calibrated from its own derived seed.
inline NormalizerMap calibrate_normalizers(const Collection& c, const std::vector<std::string>& features, Normalization mode,
                                           std::size_t sample_size, std::uint64_t seed) {
    NormalizerMap out;
    for (const auto& f : features) out[f] = calibrate_normalizer(c, f, mode, sample_size, derive_seed(seed, "calibrate/" + f));
    return out;
}

// ---------------------------------------------------------------------------
// Queries and neighbor lists
// ---------------------------------------------------------------------------

/**
 * \brief A query image's vectors, possibly from a different collection than
 *        the one searched. Source images with the same id are excluded.
 */
struct Query {
    std::string id;
    std::map<std::string, std::span<const double>> vectors;

    std::span<const double> vector(const std::string& feature) const {
        auto it = vectors.find(feature);
        if (it == vectors.end()) throw Error("query " + id + " has no vector for feature " + feature);
        return it->second;
    }
};

inline Query make_query(const Collection& c, std::size_t index) {
    Query q{c.id(index), {}};
    for (const auto& [name, fm] : c.features()) q.vectors.emplace(name, fm.row(index));
    return q;
}

inline Query make_query(const Collection& c, const std::string& image_id) { return make_query(c, c.require_index(image_id)); }

struct Neighbor {
    std::size_t index;  ///< into the searched collection
    double distance;

    bool operator==(const Neighbor&) const = default;
};

/** \brief k nearest images, distance ascending, ties by ascending image id. */
struct NeighborList {
    std::string query_id;
    std::vector<Neighbor> entries;

    bool operator==(const NeighborList&) const = default;
};

/**
 * \brief Weighted sum of normalized per-feature distances.
 *
 * With rankmax, feature i contributes the fraction of candidate images
 * (all searched images except the query) strictly closer to the query
 * than the target.
 */
class CombinedDistance {
public:
    CombinedDistance(const Collection& source, WeightVector weights, NormalizerMap normalizers = {})
        : source_(&source), weights_(std::move(weights)), normalizers_(std::move(normalizers)) {
        for (const auto& name : weights_.names) {
            if (!source.has_feature(name)) throw Error("combined distance: unknown feature " + name);
            normalizers_.try_emplace(name, DistanceNormalizer{});
        }
    }

    const WeightVector& weights() const { return weights_; }

    /// Distances from the query to every searched image, in collection order.
    std::vector<double> from(const Query& q) const {
        const std::size_t n = source_->size();
        const auto excluded = source_->index_of(q.id);
        std::vector<double> total(n, 0.0);
        std::vector<double> raw(n);
        for (std::size_t f = 0; f < weights_.size(); ++f) {
            const double lambda = weights_.weights[f];
            if (lambda == 0.0) continue;
            const auto& name = weights_.names[f];
            const auto& fm = source_->feature(name);
            const auto qv = q.vector(name);
            for (std::size_t i = 0; i < n; ++i) raw[i] = l1_distance(qv, fm.row(i));
            const auto& norm = normalizers_.at(name);
            if (norm.mode == Normalization::rankmax) {
                std::vector<double> sorted;
                sorted.reserve(n);
                for (std::size_t i = 0; i < n; ++i)
                    if (!excluded || i != *excluded) sorted.push_back(raw[i]);
                std::sort(sorted.begin(), sorted.end());
                const double denom = static_cast<double>(std::max<std::size_t>(sorted.size(), 1));
                for (std::size_t i = 0; i < n; ++i) {
                    const auto closer = std::lower_bound(sorted.begin(), sorted.end(), raw[i]) - sorted.begin();
                    total[i] += lambda * (static_cast<double>(closer) / denom);
                }
            } else {
                for (std::size_t i = 0; i < n; ++i) total[i] += lambda * norm.apply(raw[i]);
            }
        }
        return total;
    }

    double between(const Query& q, std::size_t target) const { return from(q).at(target); }

private:
    const Collection* source_;
    WeightVector weights_;
    NormalizerMap normalizers_;
};

/// d_Lambda(x, x') for two images of the same collection.
inline double combined_distance(const Collection& c, const std::string& x, const std::string& other,
                                const CombinedDistance& metric) {
    return metric.between(make_query(c, x), c.require_index(other));
}

namespace detail {

inline NeighborList select_nearest(const Collection& source, const std::string& query_id,
                                   const std::vector<double>& dist, std::size_t k) {
    if (k == 0) throw Error("knn: k must be at least 1");
    const auto excluded = source.index_of(query_id);
    std::vector<std::size_t> cand;
    cand.reserve(source.size());
    for (std::size_t i = 0; i < source.size(); ++i)
        if (!excluded || i != *excluded) cand.push_back(i);
    const auto less = [&](std::size_t a, std::size_t b) {
        if (dist[a] != dist[b]) return dist[a] < dist[b];
        return source.id_rank(a) < source.id_rank(b);
    };
    const std::size_t take = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end(), less);
    NeighborList nl{query_id, {}};
    nl.entries.reserve(take);
    for (std::size_t r = 0; r < take; ++r) nl.entries.push_back({cand[r], dist[cand[r]]});
    return nl;
}

}  // namespace detail

/// Exhaustive L1 search in one feature space.
inline NeighborList knn(const Collection& source, const std::string& feature, const Query& q, std::size_t k) {
    const auto& fm = source.feature(feature);
    const auto qv = q.vector(feature);
    std::vector<double> dist(source.size());
    for (std::size_t i = 0; i < source.size(); ++i) dist[i] = l1_distance(qv, fm.row(i));
    return detail::select_nearest(source, q.id, dist, k);
}

/// Exhaustive search under a combined distance.
inline NeighborList knn(const Collection& source, const CombinedDistance& metric, const Query& q, std::size_t k) {
    return detail::select_nearest(source, q.id, metric.from(q), k);
}

inline NeighborList knn(const Collection& c, const std::string& feature, const std::string& query_id, std::size_t k) {
    return knn(c, feature, make_query(c, query_id), k);
}

inline NeighborList knn(const Collection& c, const CombinedDistance& metric, const std::string& query_id, std::size_t k) {
    return knn(c, metric, make_query(c, query_id), k);
}

/// Debug dump: `query_id<TAB>neighbor_id<TAB>distance`.
inline void write_neighbors(std::ostream& out, const Collection& source, const NeighborList& nl) {
    for (const auto& e : nl.entries) out << nl.query_id << '\t' << source.id(e.index) << '\t' << format_double(e.distance) << '\n';
}

}  // namespace tagfuse
