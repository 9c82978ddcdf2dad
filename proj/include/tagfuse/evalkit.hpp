#pragma once

/** \file evalkit.hpp
 *  \brief Retrieval evaluation: AP, NDCG@k, means over concepts, the paired
 *         randomization test, and run / qrels file I/O.
 *
 * NDCG uses binary gains and the log2(i + 1) discount. AP and NDCG are both
 * computed over the candidate ranking only; relevant images that were not
 * retrieved do not count toward R or the ideal DCG.
 */

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tagfuse/collection.hpp"
#include "tagfuse/common.hpp"
#include "tagfuse/estimators.hpp"
#include "tagfuse/fusion.hpp"

namespace tagfuse {

inline constexpr std::size_t kDefaultNdcgCutoff = 100;
inline constexpr std::size_t kDefaultPermutations = 100000;
inline constexpr std::size_t kExactRandomizationLimit = 20;

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// AP of a 0/1 label sequence in rank order; R is the number of 1s.
inline double average_precision(std::span<const char> labels) {
    double hits = 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i]) {
            hits += 1.0;
            sum += hits / static_cast<double>(i + 1);
        }
    return hits > 0.0 ? sum / hits : 0.0;
}

inline double ndcg_at(std::span<const char> labels, std::size_t cutoff = kDefaultNdcgCutoff) {
    if (cutoff == 0) throw Error("ndcg_at: cutoff must be at least 1");
    std::size_t relevant = 0;
    double dcg = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (!labels[i]) continue;
        ++relevant;
        if (i < cutoff) dcg += 1.0 / std::log2(static_cast<double>(i + 2));
    }
    double idcg = 0.0;
    for (std::size_t i = 0; i < std::min(relevant, cutoff); ++i) idcg += 1.0 / std::log2(static_cast<double>(i + 2));
    return idcg > 0.0 ? dcg / idcg : 0.0;
}

inline std::vector<char> relevance_labels(std::span<const std::string> ranking, const std::set<std::string>& relevant) {
    std::vector<char> labels(ranking.size());
    for (std::size_t i = 0; i < ranking.size(); ++i) labels[i] = relevant.count(ranking[i]) ? 1 : 0;
    return labels;
}

inline double average_precision(std::span<const std::string> ranking, const std::set<std::string>& relevant) {
    return average_precision(relevance_labels(ranking, relevant));
}

inline double ndcg_at(std::span<const std::string> ranking, const std::set<std::string>& relevant,
                      std::size_t cutoff = kDefaultNdcgCutoff) {
    return ndcg_at(relevance_labels(ranking, relevant), cutoff);
}

/// Unweighted mean (mAP / mNDCG).
inline double mean_over_concepts(std::span<const double> scores) {
    if (scores.empty()) throw Error("mean_over_concepts: no concepts");
    double s = 0.0;
    for (double v : scores) s += v;
    return s / static_cast<double>(scores.size());
}

// ---------------------------------------------------------------------------
// Randomization test
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<double> paired_differences(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error("randomization_test: score lists differ in length");
    if (a.size() < 2) throw Error("randomization_test: need at least 2 paired scores");
    std::vector<double> d(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    return d;
}

/// Flipped sums at least this close to the observed |sum| count as reaching it.
inline double flip_tolerance(std::span<const double> d) {
    double s = 0.0;
    for (double v : d) s += std::abs(v);
    return 1e-12 * s;
}

inline double flipped_sum(std::span<const double> d, std::uint64_t mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) s += ((mask >> i) & 1U) ? -d[i] : d[i];
    return s;
}

}  // namespace detail

/**
 * \brief Exact two-sided sign-flip p-value: the share of all 2^n flips whose
 *        |mean difference| reaches the observed one (identity included).
 */
inline double randomization_p_exact(std::span<const double> a, std::span<const double> b) {
    const auto d = detail::paired_differences(a, b);
    if (d.size() > 30) throw Error("randomization_p_exact: too many concepts for enumeration");
    const double observed = std::abs(detail::flipped_sum(d, 0));
    const double tol = detail::flip_tolerance(d);
    const std::uint64_t total = std::uint64_t{1} << d.size();
    std::uint64_t count = 0;
    for (std::uint64_t mask = 0; mask < total; ++mask)
        if (std::abs(detail::flipped_sum(d, mask)) >= observed - tol) ++count;
    return static_cast<double>(count) / static_cast<double>(total);
}

/// Seeded Monte-Carlo sign-flip p-value, (1 + hits) / (1 + n_perm).
inline double randomization_p_sampled(std::span<const double> a, std::span<const double> b, std::size_t n_perm,
                                      std::uint64_t seed) {
    const auto d = detail::paired_differences(a, b);
    if (n_perm == 0) throw Error("randomization_test: n_perm must be at least 1");
    const double observed = std::abs(detail::flipped_sum(d, 0));
    const double tol = detail::flip_tolerance(d);
    Rng rng(seed);
    std::size_t hits = 0;
    for (std::size_t p = 0; p < n_perm; ++p) {
        double s = 0.0;
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            if (i % 64 == 0) bits = rng.next();
            s += (bits & 1U) ? -d[i] : d[i];
            bits >>= 1;
        }
        if (std::abs(s) >= observed - tol) ++hits;
    }
    return static_cast<double>(hits + 1) / static_cast<double>(n_perm + 1);
}

/// Exact enumeration up to 20 paired concepts, sampled flips beyond.
inline double randomization_test(std::span<const double> a, std::span<const double> b,
                                 std::size_t n_perm = kDefaultPermutations, std::uint64_t seed = 0) {
    if (a.size() == b.size() && a.size() <= kExactRandomizationLimit) return randomization_p_exact(a, b);
    return randomization_p_sampled(a, b, n_perm, seed);
}

// ---------------------------------------------------------------------------
// Qrels
// ---------------------------------------------------------------------------

/** \brief Binary judgments per (tag, image); unjudged pairs are irrelevant. */
struct Qrels {
    std::map<std::string, std::map<std::string, int>> judgments;

    bool has_tag(const std::string& tag) const { return judgments.count(tag) != 0; }

    std::set<std::string> relevant(const std::string& tag) const {
        std::set<std::string> out;
        auto it = judgments.find(tag);
        if (it == judgments.end()) return out;
        for (const auto& [id, rel] : it->second)
            if (rel > 0) out.insert(id);
        return out;
    }

    std::vector<std::string> tags() const {
        std::vector<std::string> out;
        for (const auto& [tag, j] : judgments) out.push_back(tag);
        return out;
    }

    /// Concept labels (tags judged relevant) of every judged image.
    std::map<std::string, std::set<std::string>> labels_by_image() const {
        std::map<std::string, std::set<std::string>> out;
        for (const auto& [tag, j] : judgments)
            for (const auto& [id, rel] : j) {
                auto& labels = out[id];
                if (rel > 0) labels.insert(tag);
            }
        return out;
    }

    static Qrels from_ground_truth(const std::map<std::string, std::set<std::string>>& gt) {
        Qrels q;
        for (const auto& [tag, ids] : gt) {
            auto& j = q.judgments[tag];
            for (const auto& id : ids) j[id] = 1;
        }
        return q;
    }

    bool operator==(const Qrels&) const = default;
};

inline Qrels read_qrels(std::istream& in, const std::string& name = "<qrels>") {
    Qrels q;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line.front() == '#') continue;
        auto f = split(line, '\t');
        int rel = 0;
        if (f.size() != 3) throw ParseError(name, lineno, "expected tag<TAB>image_id<TAB>rel");
        if (!parse_int(f[2], rel) || (rel != 0 && rel != 1)) throw ParseError(name, lineno, "relevance must be 0 or 1");
        auto& j = q.judgments[fold_tag(f[0])];
        if (!j.emplace(std::string(f[1]), rel).second)
            throw ParseError(name, lineno, "duplicate judgment for " + std::string(f[0]) + "/" + std::string(f[1]));
    }
    return q;
}

inline Qrels read_qrels(const std::string& path) {
    auto in = detail::open_input(path);
    return read_qrels(in, path);
}

inline void write_qrels(std::ostream& out, const Qrels& q) {
    for (const auto& [tag, j] : q.judgments)
        for (const auto& [id, rel] : j) out << tag << '\t' << id << '\t' << rel << '\n';
}

// ---------------------------------------------------------------------------
// Run files
// ---------------------------------------------------------------------------

struct RankedItem {
    std::string image_id;
    double score;

    bool operator==(const RankedItem&) const = default;
};

/** \brief Ranked output of one system: per tag, descending score, ties by id. */
struct RunFile {
    std::string run_id;
    std::map<std::string, std::vector<RankedItem>> per_tag;

    std::vector<std::string> ranking(const std::string& tag) const {
        std::vector<std::string> out;
        auto it = per_tag.find(tag);
        if (it == per_tag.end()) return out;
        for (const auto& item : it->second) out.push_back(item.image_id);
        return out;
    }

    bool operator==(const RunFile&) const = default;
};

inline void add_to_run(RunFile& run, const ScoreTable& st) {
    auto& items = run.per_tag[st.tag];
    items.clear();
    for (const auto& id : ranking_of(st)) items.push_back({id, st.scores.at(id)});
}

/// `tag<TAB>image_id<TAB>rank<TAB>score<TAB>run_id`, rank 1-based per tag.
inline void write_run(std::ostream& out, const RunFile& run) {
    for (const auto& [tag, items] : run.per_tag)
        for (std::size_t r = 0; r < items.size(); ++r)
            out << tag << '\t' << items[r].image_id << '\t' << (r + 1) << '\t' << format_double(items[r].score) << '\t'
                << run.run_id << '\n';
}

inline RunFile read_run(std::istream& in, const std::string& name = "<run>") {
    RunFile run;
    bool have_id = false;
    std::map<std::string, std::set<std::string>> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line.front() == '#') continue;
        auto f = split(line, '\t');
        if (f.size() != 5)
            throw ParseError(name, lineno, "expected 5 fields (tag, image_id, rank, score, run_id), got " + std::to_string(f.size()));
        const std::string tag(f[0]);
        const std::string id(f[1]);
        std::size_t rank = 0;
        double score = 0.0;
        if (!parse_int(f[2], rank) || rank == 0) throw ParseError(name, lineno, "bad rank '" + std::string(f[2]) + "'");
        if (!parse_double(f[3], score) || !std::isfinite(score)) throw ParseError(name, lineno, "bad score '" + std::string(f[3]) + "'");
        if (!have_id) {
            run.run_id = std::string(f[4]);
            have_id = true;
        } else if (f[4] != run.run_id) {
            throw ParseError(name, lineno, "run id '" + std::string(f[4]) + "' differs from '" + run.run_id + "'");
        }
        if (!seen[tag].insert(id).second) throw ParseError(name, lineno, "duplicate image " + id + " under tag " + tag);
        auto& items = run.per_tag[tag];
        if (rank != items.size() + 1) throw ParseError(name, lineno, "ranks must be contiguous from 1 within a tag");
        if (!items.empty()) {
            const auto& prev = items.back();
            const double pk = tie_key(prev.score);
            const double ck = tie_key(score);
            if (ck > pk || (ck == pk && id < prev.image_id))
                throw ParseError(name, lineno, "order inconsistent with scores under tag " + tag);
        }
        items.push_back({id, score});
    }
    return run;
}

inline void write_run(const std::string& path, const RunFile& run) {
    auto out = detail::open_output(path);
    write_run(out, run);
}

inline RunFile read_run(const std::string& path) {
    auto in = detail::open_input(path);
    return read_run(in, path);
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct ConceptScore {
    double ap = 0.0;
    double ndcg = 0.0;
};

struct RunEvaluation {
    std::string run_id;
    std::map<std::string, ConceptScore> per_concept;
    std::set<std::string> unjudged;  ///< tags in the run with no qrels entry
    double map = 0.0;
    double mndcg = 0.0;
};

inline RunEvaluation evaluate_run(const RunFile& run, const Qrels& qrels, std::size_t cutoff = kDefaultNdcgCutoff) {
    RunEvaluation ev;
    ev.run_id = run.run_id;
    std::vector<double> aps;
    std::vector<double> ndcgs;
    for (const auto& [tag, items] : run.per_tag) {
        if (!qrels.has_tag(tag)) ev.unjudged.insert(tag);
        const auto ranking = run.ranking(tag);
        const auto relevant = qrels.relevant(tag);
        ConceptScore cs{average_precision(ranking, relevant), ndcg_at(ranking, relevant, cutoff)};
        ev.per_concept[tag] = cs;
        aps.push_back(cs.ap);
        ndcgs.push_back(cs.ndcg);
    }
    if (!aps.empty()) {
        ev.map = mean_over_concepts(aps);
        ev.mndcg = mean_over_concepts(ndcgs);
    }
    return ev;
}

struct PairedTest {
    std::string run_a;
    std::string run_b;
    std::size_t concepts = 0;
    double p_ap = 1.0;
    double p_ndcg = 1.0;
};

/// Randomization test between two evaluated runs over their shared concepts.
inline PairedTest compare_runs(const RunEvaluation& a, const RunEvaluation& b, std::size_t n_perm, std::uint64_t seed) {
    PairedTest t{a.run_id, b.run_id, 0, 1.0, 1.0};
    std::vector<double> ap_a, ap_b, nd_a, nd_b;
    for (const auto& [tag, sa] : a.per_concept) {
        auto it = b.per_concept.find(tag);
        if (it == b.per_concept.end()) continue;
        ap_a.push_back(sa.ap);
        ap_b.push_back(it->second.ap);
        nd_a.push_back(sa.ndcg);
        nd_b.push_back(it->second.ndcg);
    }
    t.concepts = ap_a.size();
    if (t.concepts < 2) return t;
    t.p_ap = randomization_test(ap_a, ap_b, n_perm, derive_seed(seed, "ap"));
    t.p_ndcg = randomization_test(nd_a, nd_b, n_perm, derive_seed(seed, "ndcg"));
    return t;
}

inline std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

/**
 * \brief Plain-text report: one `concept<TAB>AP<TAB>NDCG@k` table per run,
 *        mAP/mNDCG footers, then pairwise p-values between runs.
 */
inline void write_report(std::ostream& out, const std::vector<RunEvaluation>& evals, std::size_t cutoff,
                         std::size_t n_perm, std::uint64_t seed) {
    for (const auto& ev : evals) {
        out << "# run\t" << ev.run_id << '\n';
        out << "concept\tAP\tNDCG@" << cutoff << '\n';
        for (const auto& [tag, cs] : ev.per_concept) out << tag << '\t' << fixed6(cs.ap) << '\t' << fixed6(cs.ndcg) << '\n';
        for (const auto& tag : ev.unjudged) out << "# unjudged\t" << tag << '\n';
        out << "mAP\t" << fixed6(ev.map) << '\n';
        out << "mNDCG\t" << fixed6(ev.mndcg) << "\n\n";
    }
    if (evals.size() >= 2) {
        out << "# randomization test (two-sided sign flip)\n";
        out << "run_a\trun_b\tconcepts\tp_AP\tp_NDCG\n";
        for (std::size_t i = 0; i < evals.size(); ++i)
            for (std::size_t j = i + 1; j < evals.size(); ++j) {
                const auto t = compare_runs(evals[i], evals[j], n_perm,
                                            derive_seed(seed, evals[i].run_id + "|" + evals[j].run_id));
                out << t.run_a << '\t' << t.run_b << '\t' << t.concepts << '\t' << fixed6(t.p_ap) << '\t'
                    << fixed6(t.p_ndcg) << '\n';
            }
    }
}

}  // namespace tagfuse
