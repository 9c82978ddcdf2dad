#pragma once

/** \file pipeline.hpp
 *  \brief Named retrieval pipelines (presets) composed from the estimator,
 *         fusion, and learning building blocks.
 *
 * A Scorer holds a source collection (where neighbors are searched and
 * tag statistics come from) and a benchmark collection (whose images labeled
 * with a tag form that tag's candidate set). Both may be the same object.
 */

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tagfuse/collection.hpp"
#include "tagfuse/common.hpp"
#include "tagfuse/estimators.hpp"
#include "tagfuse/evalkit.hpp"
#include "tagfuse/fusion.hpp"
#include "tagfuse/learning.hpp"
#include "tagfuse/neighbors.hpp"

namespace tagfuse {

enum class PresetKind { single_feature, early, late, tag_position, semantic_field, tag_ranking };
enum class Weighting { average, learning, learning_plus };

struct Preset {
    std::string name;
    PresetKind kind = PresetKind::single_feature;
    Normalization normalization = Normalization::none;
    Weighting weighting = Weighting::average;
    std::string feature;  ///< single-feature and tag-ranking presets
    std::string description;

    bool learned() const { return weighting != Weighting::average; }
};

/// Feature names of the four listed single-feature baselines.
inline const std::vector<std::string>& baseline_features() {
    static const std::vector<std::string> names{"COLOR", "CSLBP", "GIST", "DSIFT"};
    return names;
}

inline std::string weighting_name(Weighting w) {
    switch (w) {
        case Weighting::average: return "average";
        case Weighting::learning: return "learning";
        case Weighting::learning_plus: return "learning+";
    }
    return "average";
}

inline std::vector<Preset> fusion_presets() {
    std::vector<Preset> out;
    for (auto kind : {PresetKind::early, PresetKind::late})
        for (auto w : {Weighting::average, Weighting::learning, Weighting::learning_plus})
            for (auto n : {Normalization::minmax, Normalization::rankmax}) {
                Preset p;
                p.kind = kind;
                p.normalization = n;
                p.weighting = w;
                const std::string scheme = kind == PresetKind::early ? "Early" : "Late";
                p.name = scheme + "-" + to_string(n) + "-" + weighting_name(w);
                std::string how;
                if (w == Weighting::average)
                    how = "uniform weights";
                else if (kind == PresetKind::early)
                    how = w == Weighting::learning ? "weights from distance metric learning"
                                                   : "per-concept weights from distance metric learning";
                else
                    how = w == Weighting::learning ? "weights from coordinate ascent"
                                                   : "per-concept weights from coordinate ascent";
                p.description = scheme + " fusion with " + (n == Normalization::minmax ? "MinMax" : "RankMax") +
                                " normalization and " + how;
                out.push_back(std::move(p));
            }
    return out;
}

/// The 12 fusion presets, 4 single-feature and 3 heterogeneous baselines.
inline std::vector<Preset> list_presets() {
    auto out = fusion_presets();
    for (const auto& f : baseline_features())
        out.push_back({"TagRel-" + f, PresetKind::single_feature, Normalization::none, Weighting::average, f,
                       "Neighbor voting with feature " + f});
    out.push_back({"TagPosition", PresetKind::tag_position, Normalization::none, Weighting::average, "",
                   "Tag position in the user's tag list"});
    out.push_back({"SemanticField", PresetKind::semantic_field, Normalization::none, Weighting::average, "",
                   "Mean co-occurrence similarity to the image's other tags"});
    out.push_back({"TagRanking", PresetKind::tag_ranking, Normalization::none, Weighting::average, "",
                   "Kernel density of the image among the tag's images in one feature space"});
    return out;
}

/// Listed presets, plus TagRel-<feature> and TagRanking-<feature> for any feature name.
inline Preset resolve_preset(const std::string& name) {
    for (const auto& p : list_presets())
        if (p.name == name) return p;
    auto with_feature = [&](const std::string& prefix, PresetKind kind) -> std::optional<Preset> {
        if (name.rfind(prefix, 0) != 0 || name.size() == prefix.size()) return std::nullopt;
        return Preset{name, kind, Normalization::none, Weighting::average, name.substr(prefix.size()), ""};
    };
    if (auto p = with_feature("TagRel-", PresetKind::single_feature)) return *p;
    if (auto p = with_feature("TagRanking-", PresetKind::tag_ranking)) return *p;
    throw Error("unknown preset: " + name);
}

// ---------------------------------------------------------------------------
// Train/test split files: `image_id<TAB>train|test`
// ---------------------------------------------------------------------------

using Split = std::map<std::string, std::string>;

/// Seeded split; round(test_fraction * n) images go to test.
inline Split make_split(const Collection& c, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw Error("split: test fraction must lie in [0,1]");
    std::vector<std::string> ids;
    for (const auto& rec : c.images()) ids.push_back(rec.image_id);
    std::sort(ids.begin(), ids.end());
    Rng rng(seed);
    rng.shuffle(ids);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
    Split out;
    for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = i < n_test ? "test" : "train";
    return out;
}

inline void write_split(std::ostream& out, const Split& split) {
    for (const auto& [id, part] : split) out << id << '\t' << part << '\n';
}

inline Split read_split(std::istream& in, const std::string& name = "<split>") {
    Split out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty() || line.front() == '#') continue;
        auto f = split(line, '\t');
        if (f.size() != 2 || (f[1] != "train" && f[1] != "test")) throw ParseError(name, lineno, "expected image_id<TAB>train|test");
        if (!out.emplace(std::string(f[0]), std::string(f[1])).second)
            throw ParseError(name, lineno, "duplicate image " + std::string(f[0]));
    }
    return out;
}

inline Split read_split(const std::string& path) {
    auto in = detail::open_input(path);
    return read_split(in, path);
}

inline std::set<std::string> split_part(const Split& split, const std::string& part) {
    if (part != "train" && part != "test") throw Error("split: unknown part " + part);
    std::set<std::string> out;
    for (const auto& [id, p] : split)
        if (p == part) out.insert(id);
    return out;
}

struct ScoringParams {
    std::size_t k = 500;
    std::vector<std::string> fuse_features;    ///< empty: every feature of the source collection
    std::vector<std::string> late_estimators;  ///< empty: TagRel-<f> for each fused feature
    std::size_t calibration_sample = 10000;
    double kde_sigma = 0.0;  ///< <= 0: median heuristic
    std::size_t kde_sample_cap = kDefaultKdeSampleCap;
    std::string kde_feature;  ///< empty: first fused feature
    std::size_t semantic_min_count = 1;
    std::uint64_t seed = 0;
};

/**
 * \brief Computes base and fused score tables, caching neighbor lists and
 *        calibrations across tags.
 */
class Scorer {
public:
    Scorer(const Collection& source, const Collection& bench, ScoringParams params)
        : source_(&source), bench_(&bench), params_(std::move(params)) {
        if (source.size() == 0) throw Error("scorer: empty source collection");
        if (params_.k == 0) throw Error("scorer: k must be at least 1");
        if (params_.fuse_features.empty()) params_.fuse_features = source.feature_names();
        for (const auto& f : params_.fuse_features) {
            if (!source.has_feature(f)) throw Error("scorer: source collection has no feature " + f);
            if (!bench.has_feature(f)) throw Error("scorer: benchmark collection has no feature " + f);
        }
        if (params_.late_estimators.empty())
            for (const auto& f : params_.fuse_features) params_.late_estimators.push_back("TagRel-" + f);
        if (params_.kde_feature.empty() && !params_.fuse_features.empty()) params_.kde_feature = params_.fuse_features.front();
    }

    const ScoringParams& params() const { return params_; }
    const Collection& source() const { return *source_; }
    const Collection& bench() const { return *bench_; }

    /// Benchmark images labeled with the tag (optionally restricted), ascending id.
    std::vector<std::string> candidates(const std::string& tag, const std::set<std::string>* subset = nullptr) const {
        std::vector<std::string> out;
        for (std::size_t i : bench_->indices_with_tag(tag))
            if (!subset || subset->count(bench_->id(i))) out.push_back(bench_->id(i));
        std::sort(out.begin(), out.end());
        return out;
    }

    ScoreTable base_table(const std::string& estimator, const std::string& tag, const std::vector<std::string>& cands) {
        ScoreTable st{estimator, tag, {}, {}};
        if (estimator.rfind("TagRel-", 0) == 0) {
            const auto feature = estimator.substr(7);
            for (const auto& id : cands) st.scores.emplace(id, neighbor_vote(*source_, neighbors(feature, id), tag, params_.k));
        } else if (estimator == "TagPosition") {
            for (const auto& id : cands) st.scores.emplace(id, tag_position_score(bench_->image(bench_->require_index(id)), tag));
        } else if (estimator == "SemanticField") {
            const auto& model = similarity_model();
            for (const auto& id : cands)
                st.scores.emplace(id, semantic_field_score(bench_->image(bench_->require_index(id)), tag, model));
        } else if (estimator == "TagRanking" || estimator.rfind("TagRanking-", 0) == 0) {
            const std::string feature = estimator == "TagRanking" ? params_.kde_feature : estimator.substr(11);
            const double sigma = kde_sigma(tag, feature);
            const auto seed = derive_seed(params_.seed, "kde/" + tag + "/" + feature);
            for (const auto& id : cands) {
                // An image that is the only member of S_w has no support once excluded.
                const auto self = source_->index_of(id);
                const std::size_t others = source_->tag_count(tag) - (self && source_->has_tag(*self, tag) ? 1 : 0);
                const double s = others == 0 ? 0.0
                                             : tag_ranking_kde_score(*source_, make_query(*bench_, id), tag, feature, sigma,
                                                                     params_.kde_sample_cap, seed);
                st.scores.emplace(id, s);
            }
        } else {
            throw Error("unknown base estimator: " + estimator);
        }
        return st;
    }

    /// Analytic bounds where they exist; observed bounds (flagged in meta) otherwise.
    ScoreTable normalized(const ScoreTable& raw, Normalization mode) const {
        if (mode == Normalization::rankmax) return rankmax_normalize(raw);
        if (mode == Normalization::none) return raw;
        if (raw.estimator.rfind("TagRel-", 0) == 0) return minmax_normalize(raw, neighbor_vote_bounds(*source_, raw.tag));
        if (raw.estimator == "TagPosition" || raw.estimator == "SemanticField") return minmax_normalize(raw, {0.0, 1.0});
        auto out = minmax_normalize(raw, observed_bounds(raw));
        out.meta["bounds"] = "observed";
        return out;
    }

    std::vector<ScoreTable> late_tables(const std::string& tag, const std::vector<std::string>& cands, Normalization mode) {
        std::vector<ScoreTable> out;
        for (const auto& est : params_.late_estimators) out.push_back(normalized(base_table(est, tag, cands), mode));
        return out;
    }

    const NormalizerMap& distance_normalizers(Normalization mode) {
        auto it = normalizers_.find(mode);
        if (it == normalizers_.end())
            it = normalizers_
                     .emplace(mode, calibrate_normalizers(*source_, params_.fuse_features, mode, params_.calibration_sample,
                                                          derive_seed(params_.seed, "calibration")))
                     .first;
        return it->second;
    }

    ScoreTable early_table(const std::string& tag, const std::vector<std::string>& cands, const WeightVector& wv,
                           Normalization mode) {
        std::string key = to_string(mode);
        for (std::size_t i = 0; i < wv.size(); ++i) key += "|" + wv.names[i] + "=" + format_double(wv.weights[i]);
        auto& cache = early_cache_[key];
        if (!cache.metric) cache.metric = std::make_unique<CombinedDistance>(*source_, wv, distance_normalizers(mode));
        ScoreTable st{"Early", tag, {}, {}};
        for (const auto& id : cands) {
            auto it = cache.lists.find(id);
            if (it == cache.lists.end())
                it = cache.lists.emplace(id, knn(*source_, *cache.metric, make_query(*bench_, id), params_.k)).first;
            st.scores.emplace(id, neighbor_vote(*source_, it->second, tag, params_.k));
        }
        return st;
    }

    const NeighborList& neighbors(const std::string& feature, const std::string& id) {
        auto& cache = knn_cache_[feature];
        auto it = cache.find(id);
        if (it == cache.end()) it = cache.emplace(id, knn(*source_, feature, make_query(*bench_, id), params_.k)).first;
        return it->second;
    }

    const TagSimilarityModel& similarity_model() {
        if (!similarity_) similarity_ = build_tag_similarity(*source_, params_.semantic_min_count);
        return *similarity_;
    }

private:
    double kde_sigma(const std::string& tag, const std::string& feature) {
        if (params_.kde_sigma > 0.0) return params_.kde_sigma;
        const auto key = tag + "\t" + feature;
        auto it = sigma_cache_.find(key);
        if (it == sigma_cache_.end())
            it = sigma_cache_
                     .emplace(key, kde_bandwidth(*source_, tag, feature, params_.kde_sample_cap,
                                                 derive_seed(params_.seed, "kde-bandwidth/" + key)))
                     .first;
        return it->second;
    }

    struct EarlyCache {
        std::unique_ptr<CombinedDistance> metric;
        std::map<std::string, NeighborList> lists;
    };

    const Collection* source_;
    const Collection* bench_;
    ScoringParams params_;
    std::map<std::string, std::map<std::string, NeighborList>> knn_cache_;
    std::map<Normalization, NormalizerMap> normalizers_;
    std::map<std::string, EarlyCache> early_cache_;
    std::optional<TagSimilarityModel> similarity_;
    std::map<std::string, double> sigma_cache_;
};

/** \brief Learned weights a preset needs at scoring time. */
struct PresetWeights {
    std::optional<WeightVector> global;
    std::optional<ConceptWeights> per_concept;
};

namespace detail {

/// Reorder a weight vector to the given names (all must be present).
inline WeightVector align_weights(const WeightVector& wv, const std::vector<std::string>& names) {
    if (wv.size() != names.size())
        throw Error("weights cover " + std::to_string(wv.size()) + " names, expected " + std::to_string(names.size()));
    std::vector<double> w;
    for (const auto& n : names) w.push_back(wv.weight(n));
    return WeightVector::normalized(names, std::move(w));
}

inline WeightVector weights_for(const Preset& preset, const std::string& tag, const PresetWeights& weights,
                                const std::vector<std::string>& names) {
    if (preset.weighting == Weighting::average) return WeightVector::uniform(names);
    if (preset.weighting == Weighting::learning_plus && weights.per_concept) {
        auto it = weights.per_concept->per_concept.find(tag);
        if (it != weights.per_concept->per_concept.end()) return align_weights(it->second, names);
    }
    if (weights.global) return align_weights(*weights.global, names);
    throw Error("preset " + preset.name + " needs learned weights for concept " + tag);
}

}  // namespace detail

/// Score one tag under a preset.
inline ScoreTable score_preset(Scorer& scorer, const Preset& preset, const std::string& tag,
                               const std::vector<std::string>& cands, const PresetWeights& weights = {}) {
    switch (preset.kind) {
        case PresetKind::single_feature: return scorer.base_table("TagRel-" + preset.feature, tag, cands);
        case PresetKind::tag_position: return scorer.base_table("TagPosition", tag, cands);
        case PresetKind::semantic_field: return scorer.base_table("SemanticField", tag, cands);
        case PresetKind::tag_ranking:
            return scorer.base_table(preset.feature.empty() ? "TagRanking" : "TagRanking-" + preset.feature, tag, cands);
        case PresetKind::early: {
            const auto wv = detail::weights_for(preset, tag, weights, scorer.params().fuse_features);
            return scorer.early_table(tag, cands, wv, preset.normalization);
        }
        case PresetKind::late: {
            const auto tables = scorer.late_tables(tag, cands, preset.normalization);
            const auto wv = detail::weights_for(preset, tag, weights, scorer.params().late_estimators);
            return late_fuse(tables, wv);
        }
    }
    throw Error("unhandled preset " + preset.name);
}

/// Ranked run over the given concepts; concepts without candidates are left out.
inline RunFile score_run(Scorer& scorer, const Preset& preset, const std::vector<std::string>& concepts,
                         const std::string& run_id, const PresetWeights& weights = {},
                         const std::set<std::string>* subset = nullptr) {
    RunFile run{run_id, {}};
    for (const auto& tag : concepts) {
        const auto cands = scorer.candidates(tag, subset);
        if (cands.empty()) continue;
        add_to_run(run, score_preset(scorer, preset, tag, cands, weights));
    }
    return run;
}

// ---------------------------------------------------------------------------
// Learning drivers
// ---------------------------------------------------------------------------

struct LearnParams {
    AscentConfig ascent;
    MetricLearningConfig metric_learning;
    std::size_t n_pairs = 1000;
    std::size_t min_pos = 1;
    std::uint64_t seed = 0;
};

struct LearnOutput {
    WeightVector global;
    std::optional<ConceptWeights> per_concept;
    std::string log;
};

/// Training data for late fusion: normalized base tables per concept.
inline TrainingSet late_training_set(Scorer& scorer, Normalization mode, const std::vector<std::string>& concepts,
                                     const Qrels& qrels, const std::set<std::string>* subset) {
    TrainingSet ts{scorer.params().late_estimators, {}};
    for (const auto& tag : concepts) {
        const auto cands = scorer.candidates(tag, subset);
        if (cands.empty()) continue;
        ts.concepts.push_back(make_training_concept(scorer.late_tables(tag, cands, mode), qrels.relevant(tag)));
    }
    return ts;
}

/**
 * \brief Learn the weights a learned preset needs, on the (training) subset.
 *
 * Late presets run coordinate ascent on the late-fused ranking. Early
 * presets fit the pair loss on MinMax-normalized distances of training
 * image pairs. learning+ presets also learn one vector per concept.
 */
inline LearnOutput learn_preset(Scorer& scorer, const Preset& preset, const std::vector<std::string>& concepts,
                                const Qrels& qrels, const LearnParams& lp, const std::set<std::string>* subset = nullptr) {
    if (!preset.learned()) throw Error("preset " + preset.name + " has no learned weights");
    LearnOutput out;
    std::ostringstream log;
    if (preset.kind == PresetKind::late) {
        const auto ts = late_training_set(scorer, preset.normalization, concepts, qrels, subset);
        auto cfg = lp.ascent;
        cfg.seed = derive_seed(lp.seed, "ascent");
        const auto res = coordinate_ascent(ts, cfg);
        out.global = res.weights;
        log << "# global\tobjective\t" << format_double(res.objective) << '\n';
        write_training_log(log, res, ts.estimators);
        if (preset.weighting == Weighting::learning_plus) {
            ConceptWeights cw;
            for (const auto& tc : ts.concepts) {
                const auto pos = tc.relevant_count();
                if (pos == 0 || pos < lp.min_pos) {
                    cw.per_concept.emplace(tc.tag, out.global);
                    cw.fallback.insert(tc.tag);
                    continue;
                }
                auto ccfg = cfg;
                ccfg.seed = derive_seed(cfg.seed, "concept/" + tc.tag);
                const auto cres = coordinate_ascent(TrainingSet{ts.estimators, {tc}}, ccfg);
                cw.per_concept.emplace(tc.tag, cres.weights);
                log << "# concept\t" << tc.tag << "\tobjective\t" << format_double(cres.objective) << '\n';
                write_training_log(log, cres, ts.estimators);
            }
            for (const auto& tag : cw.fallback) log << "# fallback\t" << tag << '\n';
            out.per_concept = std::move(cw);
        }
    } else if (preset.kind == PresetKind::early) {
        const auto& features = scorer.params().fuse_features;
        const auto& norms = scorer.distance_normalizers(Normalization::minmax);
        const auto& bench = scorer.bench();
        if (features.size() == 1) {
            out.global = WeightVector::normalized(features, {1.0});
            log << "# global\tsingle feature\n";
        } else {
            const auto pairs = sample_pairs(qrels, bench, lp.n_pairs, derive_seed(lp.seed, "pairs"), subset);
            const auto res = learn_distance_weights(pair_distances(bench, pairs, features, norms), lp.metric_learning);
            out.global = res.weights;
            log << "# global\tpairs\t" << pairs.size() << "\tloss\t" << format_double(res.loss) << '\n';
            for (std::size_t i = 0; i < res.loss_trace.size(); ++i) log << i << '\t' << format_double(res.loss_trace[i]) << '\n';
        }
        if (preset.weighting == Weighting::learning_plus) {
            ConceptWeights cw;
            if (features.size() == 1) {
                for (const auto& tag : concepts) cw.per_concept.emplace(tag, out.global);
            } else {
                cw = learn_per_concept_distance(bench, qrels, concepts, features, norms, lp.n_pairs, lp.min_pos,
                                                derive_seed(lp.seed, "concept-pairs"), out.global, subset, lp.metric_learning);
            }
            for (const auto& tag : cw.fallback) log << "# fallback\t" << tag << '\n';
            out.per_concept = std::move(cw);
        }
    } else {
        throw Error("preset " + preset.name + " cannot be learned");
    }
    out.log = log.str();
    return out;
}

}  // namespace tagfuse
