#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace tagfuse;

namespace {

/// Brute-force metric of a fused ranking, written independently of the learner.
double fused_metric(const TrainingSet& ts, const std::vector<double>& w, RankMetric metric) {
    double sum = 0;
    std::size_t n = 0;
    for (const auto& tc : ts.concepts) {
        if (tc.relevant_count() == 0) continue;
        std::vector<ScoreTable> tables;
        for (std::size_t e = 0; e < ts.estimators.size(); ++e) {
            ScoreTable st{ts.estimators[e], tc.tag, {}, {}};
            for (std::size_t i = 0; i < tc.ids.size(); ++i) st.scores.emplace(tc.ids[i], tc.scores[e][i]);
            tables.push_back(st);
        }
        const auto order = ranking_of(late_fuse(tables, WeightVector::normalized(ts.estimators, w)));
        std::set<std::string> rel;
        for (std::size_t i = 0; i < tc.ids.size(); ++i)
            if (tc.relevant[i]) rel.insert(tc.ids[i]);
        sum += metric == RankMetric::ap ? average_precision(order, rel) : ndcg_at(order, rel, 100);
        ++n;
    }
    return sum / static_cast<double>(n);
}

TrainingConcept concept_from(const std::string& tag, const std::vector<std::vector<double>>& cols, const std::vector<char>& rel) {
    TrainingConcept tc;
    tc.tag = tag;
    for (std::size_t i = 0; i < rel.size(); ++i) tc.ids.push_back(padded_name("x", i, rel.size()));
    tc.scores = cols;
    tc.relevant = rel;
    return tc;
}

TrainingSet random_instance(Rng& rng, std::size_t m, std::size_t n_concepts, std::size_t max_cands) {
    TrainingSet ts;
    for (std::size_t e = 0; e < m; ++e) ts.estimators.push_back("E" + std::to_string(e));
    for (std::size_t c = 0; c < n_concepts; ++c) {
        const std::size_t n = 2 + rng.below(max_cands - 1);
        std::vector<char> rel(n);
        for (auto& r : rel) r = rng.bernoulli(0.4) ? 1 : 0;
        rel[rng.below(n)] = 1;
        std::vector<std::vector<double>> cols(m, std::vector<double>(n));
        for (auto& col : cols)
            for (double& v : col) v = rng.uniform();
        ts.concepts.push_back(concept_from("t" + std::to_string(c), cols, rel));
    }
    return ts;
}

Collection pair_world() {
    // Concepts a and b; feature "good" separates them, "noise" does not.
    std::vector<std::pair<std::string, std::vector<std::string>>> imgs;
    std::vector<std::vector<std::vector<double>>> rows(2);
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
        const bool a = i < 50;
        imgs.push_back({padded_name("i", i, 100), {a ? "a" : "b"}});
        rows[0].push_back({a ? 0.0 : 10.0});
        rows[1].push_back({rng.uniform(0, 10)});
    }
    return testutil::make_multi(imgs, {"good", "noise"}, rows);
}

Qrels pair_qrels() {
    std::map<std::string, std::set<std::string>> gt;
    for (int i = 0; i < 100; ++i) gt[i < 50 ? "a" : "b"].insert(padded_name("i", i, 100));
    return Qrels::from_ground_truth(gt);
}

}  // namespace

TEST(SamplePairs, LabelsAndBalance) {
    const auto c = pair_world();
    const auto q = pair_qrels();
    const auto pairs = sample_pairs(q, c, 1000, 5);
    ASSERT_EQ(pairs.size(), 1000u);
    std::size_t pos = 0;
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& p : pairs) {
        const bool same = q.relevant("a").count(p.a) == q.relevant("a").count(p.b);
        EXPECT_EQ(p.y, same ? 1 : 0);
        pos += p.y;
        EXPECT_NE(p.a, p.b);
        EXPECT_TRUE(seen.insert(std::minmax(p.a, p.b)).second) << "duplicate pair";
    }
    EXPECT_EQ(pos, 500u);
    EXPECT_EQ(pairs, sample_pairs(q, c, 1000, 5));
}

TEST(SamplePairs, NaturalProportionsWhenOneClassIsShort) {
    // 3 images of a, 3 of b: 6 positive pairs, 9 negative pairs.
    std::map<std::string, std::set<std::string>> gt{{"a", {"p0", "p1", "p2"}}, {"b", {"p3", "p4", "p5"}}};
    std::vector<testutil::Img> imgs;
    for (int i = 0; i < 6; ++i) imgs.push_back({"p" + std::to_string(i), {}, {double(i)}});
    const auto c = testutil::make(imgs);
    const auto pairs = sample_pairs(Qrels::from_ground_truth(gt), c, 12, 1);
    std::size_t pos = 0;
    for (const auto& p : pairs) pos += p.y;
    EXPECT_EQ(pairs.size(), 12u);
    EXPECT_EQ(pos, 6u);
}

TEST(SamplePairs, NeedsBothClasses) {
    std::map<std::string, std::set<std::string>> gt{{"a", {"p0", "p1"}}};
    const auto c = testutil::make({{"p0", {}, {0}}, {"p1", {}, {1}}});
    EXPECT_THROW(sample_pairs(Qrels::from_ground_truth(gt), c, 10, 1), Error);
}

TEST(MetricLearning, PrefersTheSeparatingFeature) {
    PairDistances pd{{"A", "B"}, {}, {}};
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const int y = i % 2;
        pd.d.push_back({y ? 0.05 : 2.0, rng.uniform(0, 2)});
        pd.y.push_back(y);
    }
    const auto res = learn_distance_weights(pd);
    EXPECT_GT(res.weights.weight("A"), res.weights.weight("B"));
    double grid_min = 1e300;
    for (int g = 0; g <= 200; ++g) {
        const std::vector<double> w{g / 200.0, 1 - g / 200.0};
        grid_min = std::min(grid_min, metric_learning_loss(pd, w));
    }
    EXPECT_LE(res.loss, grid_min + 1e-6);
}

TEST(MetricLearning, IdenticalFeaturesHaveASymmetricMinimum) {
    PairDistances pd{{"A", "B"}, {}, {}};
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        const double d = rng.uniform(0, 1.5);
        pd.d.push_back({d, d});
        pd.y.push_back(rng.bernoulli(0.5) ? 1 : 0);
    }
    const auto res = learn_distance_weights(pd);
    double grid_min = 1e300;
    for (int g = 0; g <= 20; ++g) grid_min = std::min(grid_min, metric_learning_loss(pd, std::vector<double>{g / 20.0, 1 - g / 20.0}));
    EXPECT_NEAR(res.loss, grid_min, 1e-6);
    EXPECT_NEAR(metric_learning_loss(pd, std::vector<double>{0.5, 0.5}), grid_min, 1e-9);
}

TEST(MetricLearning, SingleFeature) {
    PairDistances pd{{"A"}, {{0.3}, {1.2}}, {1, 0}};
    const auto res = learn_distance_weights(pd);
    EXPECT_EQ(res.weights.weights, std::vector<double>{1.0});
    EXPECT_NEAR(res.loss, std::pow(std::exp(-0.3) - 1, 2) + std::pow(std::exp(-1.2), 2), 1e-12);
}

TEST(MetricLearning, LossTraceIsNonIncreasingAndOnSimplex) {
    Rng rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t m = 2 + rng.below(3);
        PairDistances pd;
        for (std::size_t f = 0; f < m; ++f) pd.features.push_back("F" + std::to_string(f));
        for (int p = 0; p < 60; ++p) {
            std::vector<double> row(m);
            for (double& v : row) v = rng.uniform();
            pd.d.push_back(row);
            pd.y.push_back(rng.bernoulli(0.5) ? 1 : 0);
        }
        const auto res = learn_distance_weights(pd);
        for (std::size_t i = 1; i < res.loss_trace.size(); ++i) EXPECT_LE(res.loss_trace[i], res.loss_trace[i - 1]);
        EXPECT_TRUE(res.weights.on_simplex(1e-9));
        for (double w : res.weights.weights) EXPECT_GE(w, 0.0);
    }
}

TEST(MetricLearning, NonFiniteDistances) {
    PairDistances pd{{"A", "B"}, {{std::nan(""), 1.0}}, {1}};
    EXPECT_THROW(learn_distance_weights(pd), Error);
}

TEST(CoordinateAscent, PerfectVersusInverted) {
    // A ranks the 3 relevant of 10 candidates on top, B inverts A.
    std::vector<double> a(10), b(10);
    std::vector<char> rel(10, 0);
    for (int i = 0; i < 10; ++i) {
        a[i] = 1.0 - i / 10.0;
        b[i] = i / 10.0;
        rel[i] = i < 3;
    }
    TrainingSet ts{{"A", "B"}, {concept_from("w", {a, b}, rel)}};
    const auto res = coordinate_ascent(ts);
    double grid_best = 0;
    for (int g = 0; g <= 100; ++g) grid_best = std::max(grid_best, fused_metric(ts, {g / 100.0, 1 - g / 100.0}, RankMetric::ap));
    EXPECT_DOUBLE_EQ(grid_best, 1.0);
    EXPECT_DOUBLE_EQ(res.objective, 1.0);
    EXPECT_DOUBLE_EQ(fused_metric(ts, res.weights.weights, RankMetric::ap), 1.0);
}

TEST(CoordinateAscent, SingleEstimator) {
    TrainingSet ts{{"A"}, {concept_from("w", {{0.3, 0.9}}, {1, 0})}};
    const auto res = coordinate_ascent(ts);
    EXPECT_EQ(res.weights.weights, std::vector<double>{1.0});
}

TEST(CoordinateAscent, TraceMonotoneAndNeverBelowUniform) {
    Rng rng(31);
    for (int trial = 0; trial < 40; ++trial) {
        const auto ts = random_instance(rng, 2 + rng.below(3), 1 + rng.below(4), 12);
        AscentConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        cfg.metric = trial % 2 ? RankMetric::ndcg : RankMetric::ap;
        const auto res = coordinate_ascent(ts, cfg);
        for (const auto& trace : res.traces)
            for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GE(trace[i].objective, trace[i - 1].objective);
        EXPECT_GE(res.objective, res.uniform_objective);
        const std::vector<double> uniform(ts.estimators.size(), 1.0 / ts.estimators.size());
        EXPECT_NEAR(res.uniform_objective, fused_metric(ts, uniform, cfg.metric), 1e-12);
        EXPECT_NEAR(res.objective, fused_metric(ts, res.weights.weights, cfg.metric), 1e-12);
        EXPECT_TRUE(res.weights.on_simplex(1e-9));
        EXPECT_LE(res.traces.front().empty() ? 0 : res.traces.front().back().sweep, cfg.max_sweeps);
    }
}

TEST(CoordinateAscent, MatchesFineGridOnTwoEstimators) {
    Rng rng(77);
    for (int trial = 0; trial < 50; ++trial) {
        const auto ts = random_instance(rng, 2, 1 + rng.below(3), 8);
        AscentConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const auto res = coordinate_ascent(ts, cfg);
        double grid_best = 0;
        for (int g = 0; g <= 200; ++g) grid_best = std::max(grid_best, fused_metric(ts, {g / 200.0, 1 - g / 200.0}, RankMetric::ap));
        EXPECT_GE(res.objective, grid_best - 1e-6) << trial;
    }
}

TEST(CoordinateAscent, DeterministicUnderSeed) {
    Rng rng(5);
    const auto ts = random_instance(rng, 3, 3, 10);
    AscentConfig cfg;
    cfg.seed = 99;
    const auto a = coordinate_ascent(ts, cfg);
    const auto b = coordinate_ascent(ts, cfg);
    EXPECT_EQ(a.weights, b.weights);
    EXPECT_EQ(a.objective, b.objective);
}

TEST(CoordinateAscent, Errors) {
    TrainingSet none{{"A", "B"}, {concept_from("w", {{0.1, 0.2}, {0.3, 0.4}}, {0, 0})}};
    EXPECT_THROW(coordinate_ascent(none), Error);
    AscentConfig bad;
    bad.initial_step = 0;
    TrainingSet ok{{"A", "B"}, {concept_from("w", {{0.1, 0.2}, {0.3, 0.4}}, {1, 0})}};
    EXPECT_THROW(coordinate_ascent(ok, bad), Error);
}

TEST(PerConcept, FallbackFlagged) {
    TrainingSet ts{{"A", "B"},
                   {concept_from("good", {{0.9, 0.1, 0.2}, {0.1, 0.9, 0.8}}, {1, 0, 0}),
                    concept_from("empty", {{0.9, 0.1}, {0.1, 0.9}}, {0, 0})}};
    const auto global = WeightVector::uniform({"A", "B"});
    const auto cw = learn_per_concept(ts, {}, 1, global);
    EXPECT_EQ(cw.fallback, (std::set<std::string>{"empty"}));
    EXPECT_EQ(cw.per_concept.at("empty"), global);
    const auto none = learn_per_concept(TrainingSet{ts.estimators, {ts.concepts[0]}}, {}, 0, global);
    EXPECT_TRUE(none.fallback.empty());
}

TEST(PerConcept, BeatsGlobalWhenConceptsDisagree) {
    // Concept p is served perfectly by A only, concept q by B only.
    TrainingSet ts{{"A", "B"},
                   {concept_from("p", {{0.9, 0.8, 0.1, 0.2}, {0.1, 0.2, 0.9, 0.8}}, {1, 1, 0, 0}),
                    concept_from("q", {{0.9, 0.8, 0.1, 0.2}, {0.1, 0.2, 0.9, 0.8}}, {0, 0, 1, 1})}};
    const auto global = coordinate_ascent(ts).weights;
    const auto cw = learn_per_concept(ts, {}, 1, global);
    double per = 0, glob = 0;
    for (const auto& tc : ts.concepts) {
        TrainingSet one{ts.estimators, {tc}};
        per += fused_metric(one, cw.per_concept.at(tc.tag).weights, RankMetric::ap);
        glob += fused_metric(one, global.weights, RankMetric::ap);
    }
    EXPECT_GE(per, glob);
    EXPECT_DOUBLE_EQ(per, 2.0);
}

TEST(PerConcept, DistanceLearningPerConcept) {
    const auto c = pair_world();
    const auto q = pair_qrels();
    const auto norms = calibrate_normalizers(c, {"good", "noise"}, Normalization::minmax, 500, 1);
    const auto global = WeightVector::uniform({"good", "noise"});
    const auto cw = learn_per_concept_distance(c, q, {"a", "b", "zzz"}, {"good", "noise"}, norms, 200, 1, 3, global);
    EXPECT_GT(cw.per_concept.at("a").weight("good"), 0.5);
    EXPECT_GT(cw.per_concept.at("b").weight("good"), 0.5);
    EXPECT_EQ(cw.fallback, (std::set<std::string>{"zzz"}));
}

TEST(TrainingLog, OneLinePerAcceptedMove) {
    std::vector<double> a{0.1, 0.9, 0.5}, b{0.9, 0.1, 0.4};
    TrainingSet ts{{"A", "B"}, {concept_from("w", {a, b}, {1, 0, 0})}};
    const auto res = coordinate_ascent(ts);
    std::ostringstream out;
    write_training_log(out, res, ts.estimators);
    const auto text = out.str();
    EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), res.traces.at(res.best_restart).size());
}
