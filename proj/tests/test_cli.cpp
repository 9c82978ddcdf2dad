#include <gtest/gtest.h>

#include <cstdlib>

#include "support.hpp"

#ifndef TAGFUSE_CLI
#error "TAGFUSE_CLI must name the command-line binary"
#endif

using testutil::read_text;
using testutil::TempDir;

namespace {

int run(const std::string& args) {
    const std::string cmd = std::string(TAGFUSE_CLI) + " " + args + " 2>/dev/null";
    return std::system(cmd.c_str());
}

std::string data_flags(const TempDir& dir) {
    return "--tags " + dir.file("tags.tsv") + " --feature " + dir.file("feature_COLOR.tsv") + "," +
           dir.file("feature_GIST.tsv") + " --split " + dir.file("split.tsv") + " --qrels " + dir.file("qrels.tsv") + " --k 15";
}

}  // namespace

TEST(Cli, SynthParsesBack) {
    TempDir dir("cli_synth");
    ASSERT_EQ(run("synth --out " + dir.path.string() + " --n-images 2000 --seed 4"), 0);
    const auto c = tagfuse::load_collection(dir.file("tags.tsv"), {dir.file("feature_COLOR.tsv"), dir.file("feature_GIST.tsv")});
    EXPECT_EQ(c.size(), 2000u);
    EXPECT_EQ(c.feature_names(), (std::vector<std::string>{"COLOR", "GIST"}));
}

TEST(Cli, SynthRefusesUninformativeConfig) {
    TempDir dir("cli_bad");
    EXPECT_NE(run("synth --out " + dir.path.string() + " --q-correct 0.05 --q-incorrect 0.05"), 0);
}

TEST(Cli, ListPresets) {
    TempDir dir("cli_list");
    ASSERT_EQ(run("list-presets > " + dir.file("out.txt")), 0);
    const auto text = read_text(dir.file("out.txt"));
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 19);
    EXPECT_NE(text.find("Late-rankmax-learning+\t"), std::string::npos);
}

TEST(Cli, ScoreLearnEvalWithConfigFile) {
    TempDir dir("cli_flow");
    ASSERT_EQ(run("synth --out " + dir.path.string() + " --n-images 300 --n-tags 6 --seed 2"), 0);
    testutil::write_text(dir.file("run.cfg"), "k = 9\npreset = TagRel-COLOR\n");
    const auto flags = data_flags(dir);
    // Flags override the file: --k 15 wins over k = 9.
    ASSERT_EQ(run("score --config " + dir.file("run.cfg") + " " + flags + " --out " + dir.file("a.tsv")), 0);
    ASSERT_EQ(run("score --preset TagRel-COLOR " + flags + " --out " + dir.file("b.tsv")), 0);
    EXPECT_EQ(read_text(dir.file("a.tsv")), read_text(dir.file("b.tsv")));
    const auto no_k = flags.substr(0, flags.find(" --k"));
    ASSERT_EQ(run("score --config " + dir.file("run.cfg") + " " + no_k + " --out " + dir.file("c.tsv")), 0);
    ASSERT_EQ(run("score --preset TagRel-COLOR " + no_k + " --k 9 --out " + dir.file("d.tsv")), 0);
    EXPECT_EQ(read_text(dir.file("c.tsv")), read_text(dir.file("d.tsv")));

    EXPECT_NE(run("score --preset Late-minmax-learning " + flags + " --out " + dir.file("x.tsv")), 0);
    EXPECT_NE(run("score --preset Nope " + flags + " --out " + dir.file("x.tsv")), 0);

    ASSERT_EQ(run("learn --preset Late-minmax-learning+ " + flags + " --out " + dir.file("w")), 0);
    EXPECT_EQ(read_text(dir.file("w/weights.tsv")).rfind("# global\n", 0), 0u);
    ASSERT_EQ(run("score --preset Late-minmax-learning+ " + flags + " --weights " + dir.file("w/weights.tsv") +
                  " --concept-weights " + dir.file("w/concept_weights.tsv") + " --out " + dir.file("l.tsv")),
              0);
    ASSERT_EQ(run("eval --qrels " + dir.file("qrels.tsv") + " --run " + dir.file("a.tsv") + " --run " + dir.file("a.tsv") +
                  " --out " + dir.file("report.txt")),
              0);
    const auto report = read_text(dir.file("report.txt"));
    EXPECT_NE(report.find("TagRel-COLOR\tTagRel-COLOR\t6\t1.000000\t1.000000"), std::string::npos) << report;
}

TEST(Cli, EvalPerfectRun) {
    TempDir dir("cli_perfect");
    testutil::write_text(dir.file("q.tsv"), "w\ta\t1\nw\tc\t1\n");
    testutil::write_text(dir.file("r.tsv"), "w\ta\t1\t0.9\tr\nw\tc\t2\t0.8\tr\nw\tb\t3\t0.1\tr\n");
    ASSERT_EQ(run("eval --qrels " + dir.file("q.tsv") + " --run " + dir.file("r.tsv") + " --out " + dir.file("o.txt")), 0);
    EXPECT_NE(read_text(dir.file("o.txt")).find("mAP\t1.000000"), std::string::npos);
    testutil::write_text(dir.file("bad.tsv"), "w\ta\t1\t0.9\n");
    EXPECT_NE(run("eval --qrels " + dir.file("q.tsv") + " --run " + dir.file("bad.tsv")), 0);
}
