#pragma once

/** \file learning.hpp
 *  \brief Supervised fusion weights: distance metric learning for early
 *         fusion and coordinate ascent on a rank metric for late fusion,
 *         each in a global and a per-concept flavor.
 */

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tagfuse/collection.hpp"
#include "tagfuse/common.hpp"
#include "tagfuse/evalkit.hpp"
#include "tagfuse/fusion.hpp"
#include "tagfuse/neighbors.hpp"

namespace tagfuse {

// ---------------------------------------------------------------------------
// Pair sampling
// ---------------------------------------------------------------------------

/** \brief Two images and whether they share a ground-truth concept. */
struct LabeledPair {
    std::string a;
    std::string b;
    int y = 0;

    bool operator==(const LabeledPair&) const = default;
};

namespace detail {

struct PairPool {
    std::vector<std::string> ids;
    std::vector<std::set<std::string>> labels;
};

inline PairPool make_pair_pool(const Qrels& qrels, const Collection& c, const std::set<std::string>* subset) {
    PairPool pool;
    for (const auto& [id, labels] : qrels.labels_by_image()) {
        if (labels.empty() || !c.index_of(id)) continue;
        if (subset && !subset->count(id)) continue;
        pool.ids.push_back(id);
        pool.labels.push_back(labels);
    }
    return pool;
}

inline bool share_label(const std::set<std::string>& a, const std::set<std::string>& b) {
    auto ia = a.begin();
    auto ib = b.begin();
    while (ia != a.end() && ib != b.end()) {
        if (*ia == *ib) return true;
        if (*ia < *ib) ++ia; else ++ib;
    }
    return false;
}

inline constexpr std::size_t kEnumeratePoolLimit = 3000;

/**
 * Balanced sampling of unordered pairs (i < j) from a pool. eligible()
 * filters pairs; label() gives y. Half positives when both classes allow it,
 * otherwise the short class is exhausted and the other fills the rest.
 */
template <typename Eligible, typename Label>
std::vector<LabeledPair> sample_balanced(const std::vector<std::string>& ids, std::size_t n_pairs, std::uint64_t seed,
                                         Eligible eligible, Label label) {
    using IndexPair = std::pair<std::uint32_t, std::uint32_t>;
    std::vector<IndexPair> pos, neg;
    Rng rng(seed);
    const std::size_t n = ids.size();
    const std::size_t want_pos = n_pairs / 2;
    const std::size_t want_neg = n_pairs - want_pos;
    if (n <= kEnumeratePoolLimit) {
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = i + 1; j < n; ++j)
                if (eligible(i, j)) (label(i, j) ? pos : neg).emplace_back(i, j);
        if (pos.empty() || neg.empty()) throw Error("sample_pairs: need both positive and negative pairs");
        rng.shuffle(pos);
        rng.shuffle(neg);
    } else {
        std::set<IndexPair> seen;
        const std::size_t max_attempts = 200 * std::max<std::size_t>(n_pairs, 1);
        for (std::size_t attempt = 0; attempt < max_attempts && (pos.size() < want_pos || neg.size() < want_neg); ++attempt) {
            auto i = static_cast<std::uint32_t>(rng.below(n));
            auto j = static_cast<std::uint32_t>(rng.below(n));
            if (i == j) continue;
            if (i > j) std::swap(i, j);
            if (!eligible(i, j) || !seen.emplace(i, j).second) continue;
            auto& bucket = label(i, j) ? pos : neg;
            if (&bucket == &pos ? pos.size() < want_pos : neg.size() < want_neg) bucket.emplace_back(i, j);
        }
        if (pos.empty() || neg.empty()) throw Error("sample_pairs: need both positive and negative pairs");
    }
    std::size_t take_pos = want_pos;
    std::size_t take_neg = want_neg;
    if (pos.size() < want_pos) {
        take_pos = pos.size();
        take_neg = std::min(neg.size(), n_pairs - take_pos);
    } else if (neg.size() < want_neg) {
        take_neg = neg.size();
        take_pos = std::min(pos.size(), n_pairs - take_neg);
    }
    std::vector<std::pair<IndexPair, int>> chosen;
    for (std::size_t k = 0; k < take_pos; ++k) chosen.emplace_back(pos[k], 1);
    for (std::size_t k = 0; k < take_neg; ++k) chosen.emplace_back(neg[k], 0);
    rng.shuffle(chosen);
    std::vector<LabeledPair> out;
    out.reserve(chosen.size());
    for (const auto& [p, y] : chosen) out.push_back({ids[p.first], ids[p.second], y});
    return out;
}

}  // namespace detail

/**
 * \brief Seeded, balanced sample of labeled image pairs for metric learning.
 *
 * The pool is the images of c (restricted to subset when given) that are
 * relevant to at least one concept in qrels; y = 1 iff they share one.
 */
inline std::vector<LabeledPair> sample_pairs(const Qrels& qrels, const Collection& c, std::size_t n_pairs, std::uint64_t seed,
                                             const std::set<std::string>* subset = nullptr) {
    const auto pool = detail::make_pair_pool(qrels, c, subset);
    return detail::sample_balanced(
        pool.ids, n_pairs, seed, [](std::uint32_t, std::uint32_t) { return true; },
        [&](std::uint32_t i, std::uint32_t j) { return detail::share_label(pool.labels[i], pool.labels[j]); });
}

/// Pairs for one concept: both relevant (y = 1) versus one relevant and one not (y = 0).
inline std::vector<LabeledPair> sample_concept_pairs(const Qrels& qrels, const Collection& c, const std::string& tag,
                                                     std::size_t n_pairs, std::uint64_t seed,
                                                     const std::set<std::string>* subset = nullptr) {
    const auto pool = detail::make_pair_pool(qrels, c, subset);
    std::vector<char> pos(pool.ids.size());
    for (std::size_t i = 0; i < pool.ids.size(); ++i) pos[i] = pool.labels[i].count(tag) ? 1 : 0;
    return detail::sample_balanced(
        pool.ids, n_pairs, seed, [&](std::uint32_t i, std::uint32_t j) { return pos[i] || pos[j]; },
        [&](std::uint32_t i, std::uint32_t j) { return pos[i] && pos[j]; });
}

// ---------------------------------------------------------------------------
// Distance metric learning
// ---------------------------------------------------------------------------

/** \brief Normalized per-feature distances of labeled pairs. */
struct PairDistances {
    std::vector<std::string> features;
    std::vector<std::vector<double>> d;  ///< [pair][feature]
    std::vector<int> y;
};

/// Per-feature normalized distances for each pair (minmax normalizers clamp to [0, 1]).
inline PairDistances pair_distances(const Collection& c, const std::vector<LabeledPair>& pairs,
                                    const std::vector<std::string>& features, const NormalizerMap& normalizers) {
    PairDistances out{features, {}, {}};
    for (const auto& p : pairs) {
        const auto ia = c.require_index(p.a);
        const auto ib = c.require_index(p.b);
        std::vector<double> row;
        for (const auto& f : features) {
            const auto& fm = c.feature(f);
            const double raw = l1_distance(fm.row(ia), fm.row(ib));
            auto it = normalizers.find(f);
            row.push_back(it == normalizers.end() ? raw : it->second.apply(raw));
        }
        out.d.push_back(std::move(row));
        out.y.push_back(p.y);
    }
    return out;
}

struct MetricLearningConfig {
    double initial_step = 0.1;
    double min_step = 1e-8;
    double relative_tolerance = 1e-8;
    std::size_t max_iterations = 1000;
};

struct MetricLearningResult {
    WeightVector weights;
    double loss = 0.0;
    std::vector<double> loss_trace;  ///< loss after each accepted step, starting from the uniform weights
};

/// sum over pairs of (exp(-sum_i lambda_i d_i) - y)^2.
inline double metric_learning_loss(const PairDistances& pd, std::span<const double> lambda) {
    double loss = 0.0;
    for (std::size_t p = 0; p < pd.d.size(); ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < lambda.size(); ++i) s += lambda[i] * pd.d[p][i];
        const double r = std::exp(-s) - static_cast<double>(pd.y[p]);
        loss += r * r;
    }
    return loss;
}

/**
 * \brief Projected gradient descent of the pair loss on the simplex.
 *
 * Uniform start; each iteration tries step 0.1 and halves until the loss
 * strictly decreases (floor 1e-8). Stops on a failed line search, a
 * relative decrease below 1e-8, or 1000 iterations.
 */
inline MetricLearningResult learn_distance_weights(const PairDistances& pd, const MetricLearningConfig& cfg = {}) {
    const std::size_t m = pd.features.size();
    if (m == 0) throw Error("learn_distance_weights: no features");
    if (pd.d.empty()) throw Error("learn_distance_weights: no pairs");
    for (const auto& row : pd.d)
        if (row.size() != m) throw Error("learn_distance_weights: pair distance row has the wrong length");

    std::vector<double> lambda(m, 1.0 / static_cast<double>(m));
    if (m == 1) lambda[0] = 1.0;
    double loss = metric_learning_loss(pd, lambda);
    if (!std::isfinite(loss)) throw Error("learn_distance_weights: non-finite loss");
    MetricLearningResult res;
    res.loss_trace.push_back(loss);

    if (m > 1) {
        std::vector<double> grad(m);
        std::vector<double> step(m);
        for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
            std::fill(grad.begin(), grad.end(), 0.0);
            for (std::size_t p = 0; p < pd.d.size(); ++p) {
                double s = 0.0;
                for (std::size_t i = 0; i < m; ++i) s += lambda[i] * pd.d[p][i];
                const double e = std::exp(-s);
                const double coef = -2.0 * (e - static_cast<double>(pd.y[p])) * e;
                for (std::size_t i = 0; i < m; ++i) grad[i] += coef * pd.d[p][i];
            }
            bool accepted = false;
            double next_loss = loss;
            std::vector<double> next;
            for (double eta = cfg.initial_step; eta >= cfg.min_step; eta *= 0.5) {
                for (std::size_t i = 0; i < m; ++i) step[i] = lambda[i] - eta * grad[i];
                next = project_to_simplex(step);
                next_loss = metric_learning_loss(pd, next);
                if (!std::isfinite(next_loss)) throw Error("learn_distance_weights: non-finite loss");
                if (next_loss < loss) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) break;
            const double rel = (loss - next_loss) / std::max(std::abs(loss), std::numeric_limits<double>::min());
            lambda = std::move(next);
            loss = next_loss;
            res.loss_trace.push_back(loss);
            if (rel < cfg.relative_tolerance) break;
        }
    }
    res.weights = WeightVector::normalized(pd.features, lambda);
    res.loss = metric_learning_loss(pd, res.weights.weights);
    return res;
}

// ---------------------------------------------------------------------------
// Coordinate ascent
// ---------------------------------------------------------------------------

enum class RankMetric { ap, ndcg };

inline std::string to_string(RankMetric m) { return m == RankMetric::ap ? "AP" : "NDCG"; }

inline RankMetric parse_rank_metric(const std::string& s) {
    if (s == "AP" || s == "ap" || s == "map" || s == "mAP") return RankMetric::ap;
    if (s == "NDCG" || s == "ndcg" || s == "NDCG@100" || s == "ndcg@100") return RankMetric::ndcg;
    throw Error("unknown rank metric: " + s);
}

struct AscentConfig {
    RankMetric metric = RankMetric::ap;
    std::size_t ndcg_cutoff = kDefaultNdcgCutoff;
    double initial_step = 0.05;
    double growth = 2.0;
    std::size_t max_doublings = 10;
    double tolerance = 1e-6;
    std::size_t max_sweeps = 50;
    std::size_t restarts = 3;  ///< perturbed starts in addition to the uniform one
    double restart_noise = 0.5;
    std::size_t breakpoint_limit = 512;  ///< 0 disables breakpoint candidates
    std::size_t breakpoint_pair_limit = 200000;
    std::uint64_t seed = 0;
};

inline void validate(const AscentConfig& cfg) {
    if (!(cfg.initial_step > 0.0)) throw Error("coordinate ascent: initial step must be positive");
    if (!(cfg.tolerance > 0.0)) throw Error("coordinate ascent: tolerance must be positive");
    if (cfg.max_doublings < 1) throw Error("coordinate ascent: at least one step doubling is required");
    if (!(cfg.growth > 1.0)) throw Error("coordinate ascent: step growth must exceed 1");
    if (cfg.ndcg_cutoff == 0) throw Error("coordinate ascent: NDCG cutoff must be positive");
}

/** \brief One concept's normalized base scores, candidates in ascending id order. */
struct TrainingConcept {
    std::string tag;
    std::vector<std::string> ids;
    std::vector<std::vector<double>> scores;  ///< [estimator][candidate]
    std::vector<char> relevant;

    std::size_t relevant_count() const { return static_cast<std::size_t>(std::count(relevant.begin(), relevant.end(), 1)); }
};

struct TrainingSet {
    std::vector<std::string> estimators;
    std::vector<TrainingConcept> concepts;
};

/// Pack aligned score tables of one concept with its relevant set.
inline TrainingConcept make_training_concept(const std::vector<ScoreTable>& tables, const std::set<std::string>& relevant) {
    detail::check_aligned(tables);
    TrainingConcept tc;
    tc.tag = tables.front().tag;
    for (const auto& [id, s] : tables.front().scores) {
        tc.ids.push_back(id);
        tc.relevant.push_back(relevant.count(id) ? 1 : 0);
    }
    for (const auto& t : tables) {
        std::vector<double> col;
        col.reserve(t.scores.size());
        for (const auto& [id, s] : t.scores) col.push_back(s);
        tc.scores.push_back(std::move(col));
    }
    return tc;
}

struct AscentStep {
    std::size_t sweep = 0;
    std::size_t coordinate = 0;
    double new_weight = 0.0;  ///< raw (pre-normalization) value of the coordinate
    double objective = 0.0;
};

struct AscentResult {
    WeightVector weights;
    double objective = 0.0;
    double uniform_objective = 0.0;
    std::size_t best_restart = 0;
    std::vector<std::vector<AscentStep>> traces;  ///< one per start
};

namespace detail {

class AscentObjective {
public:
    AscentObjective(const TrainingSet& ts, const AscentConfig& cfg) : ts_(&ts), cfg_(&cfg) {
        for (std::size_t c = 0; c < ts.concepts.size(); ++c)
            if (ts.concepts[c].relevant_count() > 0) active_.push_back(c);
        if (active_.empty()) throw Error("coordinate ascent: no training concept has a relevant candidate");
    }

    const std::vector<std::size_t>& active() const { return active_; }

    /// Mean metric over concepts of the late-fused ranking under normalized raw weights.
    std::optional<double> operator()(const std::vector<double>& raw) const {
        double sum = 0.0;
        for (double w : raw) sum += w;
        if (!(sum > 0.0)) return std::nullopt;
        const auto wv = WeightVector::normalized(ts_->estimators, raw);
        double total = 0.0;
        for (std::size_t c : active_) total += concept_metric(ts_->concepts[c], wv.weights);
        return total / static_cast<double>(active_.size());
    }

private:
    double concept_metric(const TrainingConcept& tc, const std::vector<double>& w) const {
        const std::size_t n = tc.ids.size();
        keys_.resize(n);
        order_.resize(n);
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * tc.scores[i][j];
            keys_[j] = tie_key(s);
            order_[j] = j;
        }
        std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return keys_[a] > keys_[b]; });
        labels_.resize(n);
        for (std::size_t r = 0; r < n; ++r) labels_[r] = tc.relevant[order_[r]];
        return cfg_->metric == RankMetric::ap ? average_precision(labels_) : ndcg_at(labels_, cfg_->ndcg_cutoff);
    }

    const TrainingSet* ts_;
    const AscentConfig* cfg_;
    std::vector<std::size_t> active_;
    mutable std::vector<double> keys_;
    mutable std::vector<std::size_t> order_;
    mutable std::vector<char> labels_;
};

/**
 * Values of coordinate i at which some relevant/irrelevant pair of a
 * concept swaps order; one candidate is returned per interval between them.
 */
inline std::vector<double> breakpoint_candidates(const TrainingSet& ts, const std::vector<std::size_t>& active,
                                                 const std::vector<double>& raw, std::size_t coord, const AscentConfig& cfg) {
    if (cfg.breakpoint_limit == 0) return {};
    std::size_t pairs = 0;
    for (std::size_t c : active) {
        const auto r = ts.concepts[c].relevant_count();
        pairs += r * (ts.concepts[c].ids.size() - r);
    }
    if (pairs > cfg.breakpoint_pair_limit) return {};

    std::vector<double> cuts;
    std::vector<double> rest;
    for (std::size_t c : active) {
        const auto& tc = ts.concepts[c];
        const std::size_t n = tc.ids.size();
        rest.assign(n, 0.0);
        for (std::size_t i = 0; i < raw.size(); ++i)
            if (i != coord)
                for (std::size_t j = 0; j < n; ++j) rest[j] += raw[i] * tc.scores[i][j];
        const auto& own = tc.scores[coord];
        for (std::size_t a = 0; a < n; ++a) {
            if (!tc.relevant[a]) continue;
            for (std::size_t b = 0; b < n; ++b) {
                if (tc.relevant[b]) continue;
                const double dg = own[a] - own[b];
                if (dg == 0.0) continue;
                const double t = (rest[b] - rest[a]) / dg;
                if (t > 0.0 && std::isfinite(t)) cuts.push_back(t);
            }
        }
    }
    if (cuts.empty()) return {};
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<double> mids;
    mids.push_back(cuts.front() * 0.5);
    for (std::size_t k = 0; k + 1 < cuts.size(); ++k) mids.push_back(0.5 * (cuts[k] + cuts[k + 1]));
    mids.push_back(cuts.back() * 2.0);
    if (mids.size() <= cfg.breakpoint_limit) return mids;
    std::vector<double> out;
    out.reserve(cfg.breakpoint_limit);
    for (std::size_t k = 0; k < cfg.breakpoint_limit; ++k)
        out.push_back(mids[k * (mids.size() - 1) / (cfg.breakpoint_limit - 1)]);
    return out;
}

}  // namespace detail

/**
 * \brief Coordinate ascent on mean AP (or NDCG@k) of the late-fused ranking.
 *
 * For each coordinate a bidirectional line search tries
 * lambda_i +/- step * growth^j (j = 0..J, clamped at 0), plus one value
 * per interval between the coordinate's ranking breakpoints when the
 * instance is small enough. The best candidate is taken if it improves the
 * objective by more than the tolerance. Sweeps repeat until one makes no
 * move. Weights are renormalized only for evaluation. The uniform start
 * and each seeded perturbed restart run independently; the best wins.
 */
inline AscentResult coordinate_ascent(const TrainingSet& ts, const AscentConfig& cfg = {}) {
    validate(cfg);
    const std::size_t m = ts.estimators.size();
    if (m == 0) throw Error("coordinate ascent: no estimators");
    for (const auto& tc : ts.concepts)
        if (tc.scores.size() != m) throw Error("coordinate ascent: concept " + tc.tag + " has the wrong number of score columns");
    detail::AscentObjective objective(ts, cfg);

    AscentResult res;
    const std::vector<double> uniform(m, 1.0 / static_cast<double>(m));
    res.uniform_objective = *objective(m == 1 ? std::vector<double>{1.0} : uniform);
    if (m == 1) {
        res.weights = WeightVector::normalized(ts.estimators, {1.0});
        res.objective = res.uniform_objective;
        res.traces.emplace_back();
        return res;
    }

    Rng rng(derive_seed(cfg.seed, "coordinate-ascent"));
    std::optional<double> best_value;
    std::vector<double> best_raw;
    for (std::size_t start = 0; start <= cfg.restarts; ++start) {
        std::vector<double> raw = uniform;
        if (start > 0) {
            for (double& w : raw) w *= 1.0 + cfg.restart_noise * rng.uniform(-1.0, 1.0);
            raw = project_to_simplex(raw);
        }
        auto current = objective(raw);
        if (!current) continue;
        std::vector<AscentStep> trace;
        for (std::size_t sweep = 0; sweep < cfg.max_sweeps; ++sweep) {
            bool moved = false;
            for (std::size_t i = 0; i < m; ++i) {
                std::vector<double> candidates;
                double step = cfg.initial_step;
                for (std::size_t j = 0; j <= cfg.max_doublings; ++j, step *= cfg.growth) {
                    candidates.push_back(raw[i] + step);
                    candidates.push_back(std::max(raw[i] - step, 0.0));
                }
                const auto cuts = detail::breakpoint_candidates(ts, objective.active(), raw, i, cfg);
                candidates.insert(candidates.end(), cuts.begin(), cuts.end());

                double best_here = *current;
                std::optional<double> chosen;
                auto trial = raw;
                for (double v : candidates) {
                    if (v == raw[i]) continue;
                    trial[i] = v;
                    const auto val = objective(trial);
                    if (val && *val > best_here) {
                        best_here = *val;
                        chosen = v;
                    }
                }
                if (chosen && best_here > *current + cfg.tolerance) {
                    raw[i] = *chosen;
                    current = best_here;
                    trace.push_back({sweep, i, *chosen, best_here});
                    moved = true;
                }
            }
            if (!moved) break;
        }
        res.traces.push_back(std::move(trace));
        if (!best_value || *current > *best_value) {
            best_value = current;
            best_raw = raw;
            res.best_restart = start;
        }
    }
    res.weights = WeightVector::normalized(ts.estimators, best_raw);
    res.objective = *best_value;
    return res;
}

// ---------------------------------------------------------------------------
// Per-concept ("learning+") variants
// ---------------------------------------------------------------------------

/// Late fusion: coordinate ascent per concept; thin concepts fall back to the global weights.
inline ConceptWeights learn_per_concept(const TrainingSet& ts, const AscentConfig& cfg, std::size_t min_pos,
                                        const WeightVector& global) {
    ConceptWeights out;
    for (const auto& tc : ts.concepts) {
        const auto pos = tc.relevant_count();
        if (pos == 0 || pos < min_pos) {
            out.per_concept.emplace(tc.tag, global);
            out.fallback.insert(tc.tag);
            continue;
        }
        TrainingSet single{ts.estimators, {tc}};
        auto concept_cfg = cfg;
        concept_cfg.seed = derive_seed(cfg.seed, "concept/" + tc.tag);
        out.per_concept.emplace(tc.tag, coordinate_ascent(single, concept_cfg).weights);
    }
    return out;
}

/// Early fusion: metric learning per concept on that concept's pairs.
inline ConceptWeights learn_per_concept_distance(const Collection& c, const Qrels& qrels, const std::vector<std::string>& concepts,
                                                 const std::vector<std::string>& features, const NormalizerMap& normalizers,
                                                 std::size_t n_pairs, std::size_t min_pos, std::uint64_t seed,
                                                 const WeightVector& global, const std::set<std::string>* subset = nullptr,
                                                 const MetricLearningConfig& cfg = {}) {
    ConceptWeights out;
    for (const auto& tag : concepts) {
        std::size_t pos = 0;
        for (const auto& id : qrels.relevant(tag))
            if (c.index_of(id) && (!subset || subset->count(id))) ++pos;
        std::optional<WeightVector> learned;
        if (pos > 0 && pos >= min_pos) {
            try {
                const auto pairs = sample_concept_pairs(qrels, c, tag, n_pairs, derive_seed(seed, "pairs/" + tag), subset);
                learned = learn_distance_weights(pair_distances(c, pairs, features, normalizers), cfg).weights;
            } catch (const Error&) {
                learned.reset();  // no usable pairs; fall back below
            }
        }
        if (learned) {
            out.per_concept.emplace(tag, *learned);
        } else {
            out.per_concept.emplace(tag, global);
            out.fallback.insert(tag);
        }
    }
    return out;
}

/// Training log: `sweep<TAB>coordinate<TAB>new_weight<TAB>objective` per accepted move.
inline void write_training_log(std::ostream& out, const AscentResult& res, const std::vector<std::string>& names) {
    for (const auto& s : res.traces.at(res.best_restart))
        out << s.sweep << '\t' << names.at(s.coordinate) << '\t' << format_double(s.new_weight) << '\t'
            << format_double(s.objective) << '\n';
}

}  // namespace tagfuse
