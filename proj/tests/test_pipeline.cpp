#include <gtest/gtest.h>

#include <algorithm>

#include "support.hpp"

using namespace tagfuse;

namespace {

SyntheticData small_world(std::uint64_t seed = 4) {
    SyntheticConfig cfg;
    cfg.n_images = 400;
    cfg.n_tags = 6;
    cfg.features = block_features({"COLOR", "GIST"}, 6, cfg.n_tags);
    cfg.cluster_spread = 0.4;
    cfg.seed = seed;
    return generate_collection(cfg);
}

ScoringParams params(std::size_t k = 20) {
    ScoringParams p;
    p.k = k;
    p.calibration_sample = 2000;
    p.seed = 5;
    return p;
}

}  // namespace

TEST(Presets, ExactlyTheListedSet) {
    const auto presets = list_presets();
    std::vector<std::string> names;
    for (const auto& p : presets) names.push_back(p.name);
    const std::vector<std::string> expected{
        "Early-minmax-average", "Early-rankmax-average", "Early-minmax-learning", "Early-rankmax-learning",
        "Early-minmax-learning+", "Early-rankmax-learning+", "Late-minmax-average", "Late-rankmax-average",
        "Late-minmax-learning", "Late-rankmax-learning", "Late-minmax-learning+", "Late-rankmax-learning+",
        "TagRel-COLOR", "TagRel-CSLBP", "TagRel-GIST", "TagRel-DSIFT", "TagPosition", "SemanticField", "TagRanking"};
    EXPECT_EQ(names, expected);
    for (const auto& n : names) EXPECT_EQ(resolve_preset(n).name, n);
    EXPECT_EQ(resolve_preset("TagRel-foo").feature, "foo");
    EXPECT_EQ(resolve_preset("TagRanking-GIST").kind, PresetKind::tag_ranking);
    EXPECT_THROW(resolve_preset("Late-zscore-average"), Error);
    EXPECT_THROW(resolve_preset("TagRel-"), Error);
}

TEST(Scoring, SingleFeatureIsSortedNeighborVote) {
    const auto d = small_world();
    const auto& c = d.collection;
    Scorer scorer(c, c, params());
    const auto run = score_run(scorer, resolve_preset("TagRel-GIST"), {"tag4"}, "r");
    std::vector<std::pair<double, std::string>> expected;
    for (std::size_t i : c.indices_with_tag("tag4"))
        expected.emplace_back(-neighbor_vote(c, knn(c, "GIST", c.id(i), 20), "tag4", 20), c.id(i));
    std::sort(expected.begin(), expected.end());
    std::vector<std::string> ids;
    for (const auto& [s, id] : expected) ids.push_back(id);
    EXPECT_EQ(run.ranking("tag4"), ids);
}

TEST(Scoring, LateRankmaxAverageIsBorda) {
    const auto d = small_world(9);
    const auto& c = d.collection;
    Scorer scorer(c, c, params());
    for (const auto& [tag, truth] : d.ground_truth) {
        const auto cands = scorer.candidates(tag);
        const auto fused = score_preset(scorer, resolve_preset("Late-rankmax-average"), tag, cands);
        const std::vector<ScoreTable> raw{scorer.base_table("TagRel-COLOR", tag, cands), scorer.base_table("TagRel-GIST", tag, cands)};
        EXPECT_EQ(ranking_of(fused), borda_rank(raw)) << tag;
    }
}

TEST(Scoring, EarlyWithOneFeatureEqualsSingle) {
    const auto d = small_world();
    const auto& c = d.collection;
    auto p = params();
    p.fuse_features = {"COLOR"};
    Scorer scorer(c, c, p);
    for (const auto* name : {"Early-minmax-average", "Early-rankmax-average"}) {
        const auto early = score_run(scorer, resolve_preset(name), {"tag0", "tag3"}, "x");
        const auto single = score_run(scorer, resolve_preset("TagRel-COLOR"), {"tag0", "tag3"}, "x");
        EXPECT_EQ(early, single) << name;
    }
}

TEST(Scoring, OneHotWeightsReduceToBaseTables) {
    const auto d = small_world(12);
    const auto& c = d.collection;
    Scorer scorer(c, c, params());
    PresetWeights w;
    w.global = WeightVector::one_hot({"TagRel-COLOR", "TagRel-GIST"}, "TagRel-GIST");
    for (const auto& [tag, truth] : d.ground_truth) {
        const auto cands = scorer.candidates(tag);
        const auto late = score_preset(scorer, resolve_preset("Late-minmax-learning"), tag, cands, w);
        const auto base = scorer.normalized(scorer.base_table("TagRel-GIST", tag, cands), Normalization::minmax);
        EXPECT_EQ(late.scores, base.scores);
    }
    PresetWeights e;
    e.global = WeightVector::one_hot({"COLOR", "GIST"}, "COLOR");
    const auto early = score_run(scorer, resolve_preset("Early-minmax-learning"), {"tag1"}, "x", e);
    const auto single = score_run(scorer, resolve_preset("TagRel-COLOR"), {"tag1"}, "x");
    EXPECT_EQ(early, single);
}

TEST(Scoring, LearnedPresetNeedsWeights) {
    const auto d = small_world();
    Scorer scorer(d.collection, d.collection, params());
    EXPECT_THROW(score_run(scorer, resolve_preset("Late-minmax-learning"), {"tag0"}, "x"), Error);
}

TEST(Scoring, HeterogeneousLateFusion) {
    const auto d = small_world();
    auto p = params();
    p.late_estimators = {"TagRel-COLOR", "TagPosition", "SemanticField", "TagRanking-GIST"};
    Scorer scorer(d.collection, d.collection, p);
    const auto cands = scorer.candidates("tag2");
    const auto tables = scorer.late_tables("tag2", cands, Normalization::minmax);
    ASSERT_EQ(tables.size(), 4u);
    EXPECT_EQ(tables[3].meta.at("bounds"), "observed");
    for (const auto& t : tables)
        for (const auto& [id, s] : t.scores) {
            EXPECT_GE(s, 0.0);
            EXPECT_LE(s, 1.0);
        }
    const auto fused = score_preset(scorer, resolve_preset("Late-minmax-average"), "tag2", cands);
    EXPECT_EQ(fused.size(), cands.size());
}

TEST(Scoring, SeparateSourceAndBenchmark) {
    const auto source = small_world(1).collection;
    // Benchmark images get fresh ids so none of them is excluded from the source search.
    const auto bench_data = small_world(2);
    std::vector<ImageRecord> recs = bench_data.collection.images();
    for (auto& r : recs) r.image_id = "b" + r.image_id;
    std::vector<FeatureMatrix> fms;
    for (const auto& [n, fm] : bench_data.collection.features()) fms.push_back(fm);
    const auto bench = Collection::create(recs, fms);
    Scorer scorer(source, bench, params());
    const auto cands = scorer.candidates("tag0");
    EXPECT_EQ(cands.size(), bench.tag_count("tag0"));
    const auto st = scorer.base_table("TagRel-COLOR", "tag0", cands);
    for (const auto& id : cands) {
        const auto nl = knn(source, "COLOR", make_query(bench, id), 20);
        EXPECT_EQ(st.scores.at(id), neighbor_vote(source, nl, "tag0", 20));
    }
}

TEST(Split, SeededRoundTrip) {
    const auto d = small_world();
    const auto s = make_split(d.collection, 0.25, 3);
    EXPECT_EQ(split_part(s, "test").size(), 100u);
    EXPECT_EQ(s, make_split(d.collection, 0.25, 3));
    std::stringstream ss;
    write_split(ss, s);
    EXPECT_EQ(read_split(ss), s);
    std::stringstream bad("img\tvalidation\n");
    EXPECT_THROW(read_split(bad), ParseError);
}

TEST(Learning, LatePresetOutputs) {
    const auto d = small_world(6);
    Scorer scorer(d.collection, d.collection, params());
    const auto q = Qrels::from_ground_truth(d.ground_truth);
    std::vector<std::string> concepts = q.tags();
    concepts.push_back("never-seen");
    LearnParams lp;
    lp.seed = 8;
    const auto out = learn_preset(scorer, resolve_preset("Late-minmax-learning+"), concepts, q, lp);
    EXPECT_TRUE(out.global.on_simplex());
    ASSERT_TRUE(out.per_concept);
    EXPECT_EQ(out.per_concept->per_concept.size(), q.tags().size());
    const auto again = learn_preset(scorer, resolve_preset("Late-minmax-learning+"), concepts, q, lp);
    EXPECT_EQ(out.global, again.global);
    EXPECT_EQ(out.per_concept, again.per_concept);
    EXPECT_EQ(out.log, again.log);
    EXPECT_THROW(learn_preset(scorer, resolve_preset("Late-minmax-average"), concepts, q, lp), Error);
}

TEST(Learning, EarlyPresetPrefersInformativeFeature) {
    const auto d = small_world(7);
    Scorer scorer(d.collection, d.collection, params());
    const auto q = Qrels::from_ground_truth(d.ground_truth);
    LearnParams lp;
    lp.seed = 2;
    lp.n_pairs = 600;
    const auto out = learn_preset(scorer, resolve_preset("Early-minmax-learning+"), q.tags(), q, lp);
    ASSERT_TRUE(out.per_concept);
    // COLOR is informative for tags 0-2, GIST for tags 3-5.
    EXPECT_GT(out.per_concept->per_concept.at("tag0").weight("COLOR"), 0.5);
    EXPECT_GT(out.per_concept->per_concept.at("tag5").weight("GIST"), 0.5);
}

TEST(Learning, SingleEstimatorGivesWeightOne) {
    const auto d = small_world();
    auto p = params();
    p.fuse_features = {"GIST"};
    Scorer scorer(d.collection, d.collection, p);
    const auto q = Qrels::from_ground_truth(d.ground_truth);
    for (const auto* name : {"Late-rankmax-learning", "Early-minmax-learning"}) {
        const auto out = learn_preset(scorer, resolve_preset(name), q.tags(), q, {});
        EXPECT_EQ(out.global.weights, std::vector<double>{1.0}) << name;
    }
}

TEST(Learning, ToyPerfectVersusInverted) {
    // Two estimators over one tag: "up" ranks the relevant images first, "down" inverts it.
    std::vector<testutil::Img> imgs;
    for (int i = 0; i < 10; ++i) imgs.push_back({padded_name("x", i, 10), {"w"}, {static_cast<double>(i)}});
    const auto c = testutil::make(imgs);
    std::map<std::string, std::set<std::string>> gt{{"w", {"x0", "x1", "x2"}}};
    TrainingSet ts{{"up", "down"}, {}};
    std::vector<ScoreTable> tables{ScoreTable{"up", "w", {}, {}}, ScoreTable{"down", "w", {}, {}}};
    for (int i = 0; i < 10; ++i) {
        tables[0].scores.emplace(padded_name("x", i, 10), 1.0 - i / 10.0);
        tables[1].scores.emplace(padded_name("x", i, 10), i / 10.0);
    }
    ts.concepts.push_back(make_training_concept(tables, gt["w"]));
    const auto res = coordinate_ascent(ts);
    const auto fused = late_fuse(tables, res.weights);
    EXPECT_DOUBLE_EQ(average_precision(ranking_of(fused), gt["w"]), 1.0);
}
