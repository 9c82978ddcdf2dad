// tagfuse: generate, score, learn and evaluate tag relevance pipelines.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "tagfuse/tagfuse.hpp"

namespace fs = std::filesystem;
using namespace tagfuse;

namespace {

struct RunConfig {
    // data
    std::string tags;
    std::vector<std::string> features;
    std::string source_tags;
    std::vector<std::string> source_features;
    std::string qrels;
    std::string split;
    std::string subset;
    std::vector<std::string> concepts;
    // estimators
    std::string preset;
    std::size_t k = 500;
    std::vector<std::string> fuse_features;
    std::vector<std::string> late_estimators;
    std::size_t calibration_sample = 10000;
    double kde_sigma = 0.0;
    std::size_t kde_sample_cap = kDefaultKdeSampleCap;
    std::string kde_feature;
    std::size_t semantic_min_count = 1;
    // weights
    std::string weights;
    std::string concept_weights;
    // learning
    std::string metric = "AP";
    std::size_t n_pairs = 1000;
    std::size_t min_pos = 1;
    AscentConfig ascent;
    // output
    std::string out;
    std::string run_id;
    std::uint64_t seed = 1;
};

struct SynthOptions {
    std::string out_dir;
    std::size_t n_images = 2000;
    std::size_t n_tags = 20;
    std::size_t n_users = 200;
    std::vector<std::string> features{"COLOR", "GIST"};
    std::size_t dim = 16;
    double q_correct = 0.9;
    double q_incorrect = 0.05;
    double cluster_spread = 0.15;
    double test_fraction = 0.5;
    std::uint64_t seed = 1;
};

struct EvalOptions {
    std::string qrels;
    std::vector<std::string> runs;
    std::string out;
    std::size_t cutoff = kDefaultNdcgCutoff;
    std::size_t n_perm = kDefaultPermutations;
    std::uint64_t seed = 1;
};

void add_data_options(CLI::App* cmd, RunConfig& cfg) {
    cmd->add_option("--tags", cfg.tags, "Benchmark tags file")->required();
    cmd->add_option("--feature", cfg.features, "Benchmark feature file (repeatable)")->required()->delimiter(',');
    cmd->add_option("--source-tags", cfg.source_tags, "Source tags file (default: the benchmark)");
    cmd->add_option("--source-feature", cfg.source_features, "Source feature file (repeatable)")->delimiter(',');
    cmd->add_option("--split", cfg.split, "Split file (image_id<TAB>train|test)");
    cmd->add_option("--concepts", cfg.concepts, "Tags to process (default: qrels tags, else every tag)")->delimiter(',');
    cmd->add_option("--k", cfg.k, "Number of visual neighbors");
    cmd->add_option("--features", cfg.fuse_features, "Feature names to fuse (default: all)")->delimiter(',');
    cmd->add_option("--late-estimators", cfg.late_estimators, "Base estimators for late fusion (default: TagRel-<feature>)")
        ->delimiter(',');
    cmd->add_option("--calibration-sample", cfg.calibration_sample, "Random pairs for MinMax distance calibration");
    cmd->add_option("--kde-sigma", cfg.kde_sigma, "KDE bandwidth (<= 0: median heuristic)");
    cmd->add_option("--kde-sample-cap", cfg.kde_sample_cap, "Images sampled per KDE score");
    cmd->add_option("--kde-feature", cfg.kde_feature, "Feature for TagRanking (default: first fused feature)");
    cmd->add_option("--semantic-min-count", cfg.semantic_min_count, "Minimum tag frequency for co-occurrence similarity");
    cmd->add_option("--seed", cfg.seed, "Root seed");
    cmd->add_option("--config", "key = value file supplying any flag; command-line flags win");
}

Collection load(const std::string& tags, const std::vector<std::string>& features) { return load_collection(tags, features); }

ScoringParams scoring_params(const RunConfig& cfg) {
    ScoringParams p;
    p.k = cfg.k;
    p.fuse_features = cfg.fuse_features;
    p.late_estimators = cfg.late_estimators;
    p.calibration_sample = cfg.calibration_sample;
    p.kde_sigma = cfg.kde_sigma;
    p.kde_sample_cap = cfg.kde_sample_cap;
    p.kde_feature = cfg.kde_feature;
    p.semantic_min_count = cfg.semantic_min_count;
    p.seed = derive_seed(cfg.seed, "scoring");
    return p;
}

std::vector<std::string> concept_list(const RunConfig& cfg, const Collection& bench, const Qrels* qrels) {
    if (!cfg.concepts.empty()) {
        std::vector<std::string> out;
        for (const auto& t : cfg.concepts) out.push_back(fold_tag(t));
        return out;
    }
    if (qrels) return qrels->tags();
    std::vector<std::string> out;
    for (const auto& [tag, ids] : bench.tag_index()) out.push_back(tag);
    return out;
}

std::optional<std::set<std::string>> subset_of(const RunConfig& cfg) {
    if (cfg.split.empty()) {
        if (!cfg.subset.empty()) throw Error("--subset needs --split");
        return std::nullopt;
    }
    return split_part(read_split(cfg.split), cfg.subset.empty() ? "test" : cfg.subset);
}

std::ofstream open_out(const std::string& path) { return detail::open_output(path); }

int cmd_synth(const SynthOptions& o) {
    SyntheticConfig cfg;
    cfg.n_images = o.n_images;
    cfg.n_tags = o.n_tags;
    cfg.n_users = o.n_users;
    cfg.features = block_features(o.features, o.dim, o.n_tags);
    cfg.q_correct = o.q_correct;
    cfg.q_incorrect = o.q_incorrect;
    cfg.cluster_spread = o.cluster_spread;
    cfg.seed = derive_seed(o.seed, "synth");
    const auto data = generate_collection(cfg);
    fs::create_directories(o.out_dir);
    const fs::path dir(o.out_dir);
    write_tags_file((dir / "tags.tsv").string(), data.collection);
    for (const auto& name : data.collection.feature_names())
        write_feature_file((dir / ("feature_" + name + ".tsv")).string(), data.collection, name);
    {
        auto out = open_out((dir / "qrels.tsv").string());
        write_ground_truth(out, data.ground_truth);
    }
    {
        auto out = open_out((dir / "split.tsv").string());
        write_split(out, make_split(data.collection, o.test_fraction, derive_seed(o.seed, "split")));
    }
    std::cerr << "wrote " << data.collection.size() << " images to " << o.out_dir << '\n';
    return 0;
}

struct Loaded {
    Collection bench;
    std::optional<Collection> source;
    const Collection& src() const { return source ? *source : bench; }
};

Loaded load_data(const RunConfig& cfg) {
    Loaded l{load(cfg.tags, cfg.features), std::nullopt};
    if (!cfg.source_tags.empty())
        l.source = load(cfg.source_tags, cfg.source_features.empty() ? cfg.features : cfg.source_features);
    else if (!cfg.source_features.empty())
        throw Error("--source-feature needs --source-tags");
    return l;
}

int cmd_score(const RunConfig& cfg) {
    const auto preset = resolve_preset(cfg.preset);
    const auto data = load_data(cfg);
    std::optional<Qrels> qrels;
    if (!cfg.qrels.empty()) qrels = read_qrels(cfg.qrels);
    const auto subset = subset_of(cfg);
    PresetWeights weights;
    if (!cfg.weights.empty()) weights.global = read_weights(cfg.weights);
    if (!cfg.concept_weights.empty()) weights.per_concept = read_concept_weights(cfg.concept_weights);
    if (preset.learned() && !weights.global && !weights.per_concept)
        throw Error("preset " + preset.name + " needs --weights or --concept-weights");

    Scorer scorer(data.src(), data.bench, scoring_params(cfg));
    const auto concepts = concept_list(cfg, data.bench, qrels ? &*qrels : nullptr);
    const auto run = score_run(scorer, preset, concepts, cfg.run_id.empty() ? preset.name : cfg.run_id, weights,
                               subset ? &*subset : nullptr);
    if (cfg.out.empty() || cfg.out == "-") {
        write_run(std::cout, run);
    } else {
        write_run(cfg.out, run);
    }
    std::cerr << "scored " << run.per_tag.size() << " concepts with " << preset.name << '\n';
    return 0;
}

int cmd_learn(RunConfig cfg) {
    const auto preset = resolve_preset(cfg.preset);
    if (!preset.learned()) throw Error("preset " + preset.name + " has no learned weights");
    if (cfg.qrels.empty()) throw Error("learn needs --qrels");
    const auto data = load_data(cfg);
    const auto qrels = read_qrels(cfg.qrels);
    if (cfg.subset.empty()) cfg.subset = "train";
    const auto subset = subset_of(cfg);

    Scorer scorer(data.src(), data.bench, scoring_params(cfg));
    LearnParams lp;
    lp.ascent = cfg.ascent;
    lp.ascent.metric = parse_rank_metric(cfg.metric);
    lp.n_pairs = cfg.n_pairs;
    lp.min_pos = cfg.min_pos;
    lp.seed = derive_seed(cfg.seed, "learning");
    const auto concepts = concept_list(cfg, data.bench, &qrels);
    const auto res = learn_preset(scorer, preset, concepts, qrels, lp, subset ? &*subset : nullptr);

    fs::create_directories(cfg.out);
    const fs::path dir(cfg.out);
    write_weights((dir / "weights.tsv").string(), res.global);
    if (res.per_concept) write_concept_weights((dir / "concept_weights.tsv").string(), *res.per_concept);
    {
        auto out = open_out((dir / "training_log.tsv").string());
        out << res.log;
    }
    std::cerr << "learned " << preset.name << " weights into " << cfg.out << '\n';
    return 0;
}

int cmd_eval(const EvalOptions& o) {
    const auto qrels = read_qrels(o.qrels);
    std::vector<RunEvaluation> evals;
    for (const auto& path : o.runs) evals.push_back(evaluate_run(read_run(path), qrels, o.cutoff));
    if (o.out.empty() || o.out == "-") {
        write_report(std::cout, evals, o.cutoff, o.n_perm, o.seed);
    } else {
        auto out = open_out(o.out);
        write_report(out, evals, o.cutoff, o.n_perm, o.seed);
    }
    return 0;
}

void cmd_list_presets() {
    for (const auto& p : list_presets()) std::cout << p.name << '\t' << p.description << '\n';
}

/**
 * Replace `--config FILE` by the file's `key = value` lines as `--key value`
 * flags, skipping keys already given on the command line.
 */
std::vector<std::string> expand_config(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (path.empty()) return args;
    auto given = [&](const std::string& flag) {
        for (const auto& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
        return false;
    };
    auto in = detail::open_input(path);
    std::string line;
    std::size_t lineno = 0;
    std::vector<std::string> extra;
    while (std::getline(in, line)) {
        ++lineno;
        const auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string_view::npos) throw ParseError(path, lineno, "expected key = value");
        std::string key(trim(t.substr(0, eq)));
        std::string value(trim(t.substr(eq + 1)));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
        std::replace(key.begin(), key.end(), '_', '-');
        if (key.empty()) throw ParseError(path, lineno, "empty key");
        if (given("--" + key)) continue;
        extra.push_back("--" + key);
        extra.push_back(value);
    }
    args.insert(args.end(), extra.begin(), extra.end());
    return args;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tag relevance estimation, fusion and evaluation"};
    app.require_subcommand(1);

    SynthOptions so;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic collection, qrels and split");
    synth->add_option("--out", so.out_dir, "Output directory")->required();
    synth->add_option("--n-images", so.n_images);
    synth->add_option("--n-tags", so.n_tags);
    synth->add_option("--n-users", so.n_users);
    synth->add_option("--features", so.features, "Feature names; each is informative for a disjoint block of tags")
        ->delimiter(',');
    synth->add_option("--dim", so.dim, "Dimension of every feature");
    synth->add_option("--q-correct", so.q_correct);
    synth->add_option("--q-incorrect", so.q_incorrect);
    synth->add_option("--cluster-spread", so.cluster_spread);
    synth->add_option("--test-fraction", so.test_fraction);
    synth->add_option("--seed", so.seed);
    synth->add_option("--config", "key = value file supplying any flag; command-line flags win");

    RunConfig sc;
    auto* score = app.add_subcommand("score", "Rank each concept's candidate images under a preset");
    score->add_option("--preset", sc.preset, "Preset name (see list-presets)")->required();
    add_data_options(score, sc);
    score->add_option("--qrels", sc.qrels, "Qrels file (selects the concepts)");
    score->add_option("--subset", sc.subset, "Split part to score (default: test)");
    score->add_option("--weights", sc.weights, "Global weight file");
    score->add_option("--concept-weights", sc.concept_weights, "Per-concept weight file");
    score->add_option("--out", sc.out, "Run file (default: stdout)");
    score->add_option("--run-id", sc.run_id, "Run identifier (default: the preset name)");

    RunConfig lc;
    auto* learn = app.add_subcommand("learn", "Learn fusion weights for a learned preset");
    learn->add_option("--preset", lc.preset, "Learned preset name")->required();
    add_data_options(learn, lc);
    learn->add_option("--qrels", lc.qrels, "Training judgments")->required();
    learn->add_option("--subset", lc.subset, "Split part to train on (default: train)");
    learn->add_option("--out", lc.out, "Output directory for weights and the training log")->required();
    learn->add_option("--metric", lc.metric, "AP or NDCG");
    learn->add_option("--n-pairs", lc.n_pairs, "Image pairs for distance metric learning");
    learn->add_option("--min-pos", lc.min_pos, "Positives a concept needs for its own weights");
    learn->add_option("--initial-step", lc.ascent.initial_step);
    learn->add_option("--growth", lc.ascent.growth);
    learn->add_option("--max-doublings", lc.ascent.max_doublings);
    learn->add_option("--tolerance", lc.ascent.tolerance);
    learn->add_option("--max-sweeps", lc.ascent.max_sweeps);
    learn->add_option("--restarts", lc.ascent.restarts, "Perturbed starts besides the uniform one");

    EvalOptions eo;
    auto* eval = app.add_subcommand("eval", "Evaluate runs against qrels");
    eval->add_option("--qrels", eo.qrels)->required();
    eval->add_option("--run", eo.runs, "Run file (repeatable)")->required()->delimiter(',');
    eval->add_option("--out", eo.out, "Report file (default: stdout)");
    eval->add_option("--cutoff", eo.cutoff, "NDCG cutoff");
    eval->add_option("--n-perm", eo.n_perm, "Sign flips when exact enumeration is too large");
    eval->add_option("--seed", eo.seed);
    eval->add_option("--config", "key = value file supplying any flag; command-line flags win");

    app.add_subcommand("list-presets", "Print the preset names");

    try {
        auto args = expand_config(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    try {
        if (*synth) return cmd_synth(so);
        if (*score) return cmd_score(sc);
        if (*learn) return cmd_learn(lc);
        if (*eval) return cmd_eval(eo);
        cmd_list_presets();
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
