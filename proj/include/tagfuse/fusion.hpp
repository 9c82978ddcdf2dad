#pragma once

/** \file fusion.hpp
 *  \brief Score normalization (MinMax, RankMax), weighted late fusion,
 *         Borda Count, and the weight file formats.
 */

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "tagfuse/collection.hpp"
#include "tagfuse/common.hpp"
#include "tagfuse/estimators.hpp"
#include "tagfuse/neighbors.hpp"

namespace tagfuse {

/** \brief Minimum and maximum possible score of an estimator for a tag. */
struct ScoreBounds {
    double min = 0.0;
    double max = 1.0;
};

/// Analytic range of neighbor voting: [-|S_w|/|S|, 1 - |S_w|/|S|].
inline ScoreBounds neighbor_vote_bounds(const Collection& source, const std::string& tag) {
    const double prior = tag_prior(source, tag);
    return {-prior, 1.0 - prior};
}

/// Observed range of a table, for estimators without a closed-form range.
/// A constant table gets a unit-width range so that every score maps to 0.
inline ScoreBounds observed_bounds(const ScoreTable& st) {
    if (st.scores.empty()) throw Error("observed_bounds: empty table");
    double lo = st.scores.begin()->second;
    double hi = lo;
    for (const auto& [id, s] : st.scores) {
        lo = std::min(lo, s);
        hi = std::max(hi, s);
    }
    if (!(hi > lo)) hi = lo + 1.0;
    return {lo, hi};
}

/// Descending score, ties (under tie_key) by ascending image id.
inline std::vector<std::string> ranking_of(const ScoreTable& st) {
    std::vector<std::pair<std::string, double>> items;
    items.reserve(st.scores.size());
    for (const auto& [id, s] : st.scores) items.emplace_back(id, tie_key(s));
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    out.reserve(items.size());
    for (auto& [id, s] : items) out.push_back(std::move(id));
    return out;
}

/// (g - min) / (max - min), clamped to [0, 1].
inline ScoreTable minmax_normalize(const ScoreTable& st, const ScoreBounds& bounds) {
    if (!(bounds.max > bounds.min)) throw Error("minmax_normalize: degenerate bounds for " + st.estimator + "/" + st.tag);
    ScoreTable out{st.estimator, st.tag, {}, st.meta};
    const double width = bounds.max - bounds.min;
    for (const auto& [id, g] : st.scores) out.scores.emplace(id, std::clamp((g - bounds.min) / width, 0.0, 1.0));
    out.meta["normalization"] = "minmax";
    return out;
}

/// 1 - rank / n_w, rank 1-based in descending score order.
inline ScoreTable rankmax_normalize(const ScoreTable& st) {
    if (st.scores.empty()) throw Error("rankmax_normalize: empty table for " + st.estimator + "/" + st.tag);
    const auto order = ranking_of(st);
    const double n = static_cast<double>(order.size());
    ScoreTable out{st.estimator, st.tag, {}, st.meta};
    for (std::size_t r = 0; r < order.size(); ++r) out.scores.emplace(order[r], 1.0 - static_cast<double>(r + 1) / n);
    out.meta["normalization"] = "rankmax";
    return out;
}

namespace detail {

inline void check_aligned(const std::vector<ScoreTable>& tables) {
    if (tables.empty()) throw Error("late fusion: no tables");
    const auto& first = tables.front();
    for (const auto& t : tables) {
        if (t.tag != first.tag) throw Error("late fusion: tables are for different tags");
        if (t.scores.size() != first.scores.size() ||
            !std::equal(t.scores.begin(), t.scores.end(), first.scores.begin(),
                        [](const auto& a, const auto& b) { return a.first == b.first; }))
            throw Error("late fusion: candidate sets differ for tag " + first.tag);
    }
}

}  // namespace detail

/// Per image, sum_i lambda_i * g_i. Tables and weights are matched by position.
inline ScoreTable late_fuse(const std::vector<ScoreTable>& tables, const WeightVector& wv) {
    detail::check_aligned(tables);
    if (wv.size() != tables.size()) throw Error("late_fuse: " + std::to_string(tables.size()) + " tables but " +
                                                std::to_string(wv.size()) + " weights");
    ScoreTable out{"late", tables.front().tag, {}, {}};
    std::vector<std::map<std::string, double>::const_iterator> its;
    for (const auto& t : tables) its.push_back(t.scores.begin());
    for (const auto& [id, unused] : tables.front().scores) {
        double s = 0.0;
        for (std::size_t i = 0; i < tables.size(); ++i) s += wv.weights[i] * (its[i]++)->second;
        out.scores.emplace(id, s);
    }
    return out;
}

inline WeightVector names_uniform(const std::vector<ScoreTable>& tables) {
    std::vector<std::string> names;
    for (const auto& t : tables) names.push_back(t.estimator);
    return WeightVector::uniform(std::move(names));
}

/// late_fuse with lambda_i = 1/m.
inline ScoreTable average_fuse(const std::vector<ScoreTable>& tables) {
    detail::check_aligned(tables);
    return late_fuse(tables, names_uniform(tables));
}

/**
 * \brief Borda Count: each table awards n_w - rank points; sum, then rank.
 *
 * Rank points are integers, so the totals are exact and ties fall to
 * ascending image id.
 */
inline std::vector<std::string> borda_rank(const std::vector<ScoreTable>& tables) {
    detail::check_aligned(tables);
    std::map<std::string, long long> points;
    for (const auto& t : tables) {
        const auto order = ranking_of(t);
        const auto n = static_cast<long long>(order.size());
        for (std::size_t r = 0; r < order.size(); ++r) points[order[r]] += n - static_cast<long long>(r + 1);
    }
    std::vector<std::pair<std::string, long long>> items(points.begin(), points.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> out;
    for (auto& [id, p] : items) out.push_back(std::move(id));
    return out;
}

// ---------------------------------------------------------------------------
// Weight files
// ---------------------------------------------------------------------------

/** \brief Per-concept weights; concepts listed in fallback use the global vector. */
struct ConceptWeights {
    std::map<std::string, WeightVector> per_concept;
    std::set<std::string> fallback;

    bool operator==(const ConceptWeights&) const = default;
};

/// `# global` then `name<TAB>weight` lines.
inline void write_weights(std::ostream& out, const WeightVector& wv) {
    out << "# global\n";
    for (std::size_t i = 0; i < wv.size(); ++i) out << wv.names[i] << '\t' << format_double(wv.weights[i]) << '\n';
}

/// `tag<TAB>name<TAB>weight` lines; fallback concepts are marked with `# fallback<TAB>tag`.
inline void write_concept_weights(std::ostream& out, const ConceptWeights& cw) {
    out << "# per-concept\n";
    for (const auto& tag : cw.fallback) out << "# fallback\t" << tag << '\n';
    for (const auto& [tag, wv] : cw.per_concept)
        for (std::size_t i = 0; i < wv.size(); ++i)
            out << tag << '\t' << wv.names[i] << '\t' << format_double(wv.weights[i]) << '\n';
}

inline WeightVector read_weights(std::istream& in, const std::string& name = "<weights>") {
    std::string line;
    std::size_t lineno = 0;
    bool header = false;
    std::vector<std::string> names;
    std::vector<double> weights;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (line.front() == '#') {
            if (trim(std::string_view(line).substr(1)) == "global") header = true;
            continue;
        }
        if (!header) throw ParseError(name, lineno, "expected '# global' header before weights");
        auto f = split(line, '\t');
        double w = 0.0;
        if (f.size() != 2 || !parse_double(trim(f[1]), w)) throw ParseError(name, lineno, "expected name<TAB>weight");
        if (std::find(names.begin(), names.end(), std::string(f[0])) != names.end())
            throw ParseError(name, lineno, "duplicate weight for " + std::string(f[0]));
        names.emplace_back(f[0]);
        weights.push_back(w);
    }
    if (!header) throw ParseError(name, lineno, "missing '# global' header");
    try {
        return WeightVector::normalized(std::move(names), std::move(weights));
    } catch (const Error& e) {
        throw Error(name + ": " + e.what());
    }
}

inline ConceptWeights read_concept_weights(std::istream& in, const std::string& name = "<weights>") {
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::pair<std::vector<std::string>, std::vector<double>>> raw;
    ConceptWeights cw;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        if (line.front() == '#') {
            auto f = split(line, '\t');
            if (f.size() == 2 && trim(f[0]) == "# fallback") cw.fallback.emplace(f[1]);
            continue;
        }
        auto f = split(line, '\t');
        double w = 0.0;
        if (f.size() != 3 || !parse_double(trim(f[2]), w)) throw ParseError(name, lineno, "expected tag<TAB>name<TAB>weight");
        auto& [names, weights] = raw[std::string(f[0])];
        names.emplace_back(f[1]);
        weights.push_back(w);
    }
    for (auto& [tag, nw] : raw) {
        try {
            cw.per_concept.emplace(tag, WeightVector::normalized(std::move(nw.first), std::move(nw.second)));
        } catch (const Error& e) {
            throw Error(name + ": concept " + tag + ": " + e.what());
        }
    }
    return cw;
}

inline void write_weights(const std::string& path, const WeightVector& wv) {
    auto out = detail::open_output(path);
    write_weights(out, wv);
}

inline void write_concept_weights(const std::string& path, const ConceptWeights& cw) {
    auto out = detail::open_output(path);
    write_concept_weights(out, cw);
}

inline WeightVector read_weights(const std::string& path) {
    auto in = detail::open_input(path);
    return read_weights(in, path);
}

inline ConceptWeights read_concept_weights(const std::string& path) {
    auto in = detail::open_input(path);
    return read_concept_weights(in, path);
}

}  // namespace tagfuse
