#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tagfuse/tagfuse.hpp"

namespace testutil {

struct Img {
    std::string id;
    std::vector<std::string> tags;
    std::vector<double> x;  // one row per feature, concatenated
};

/// Collection with one feature "f" of the given dimension; user ids are "u".
inline tagfuse::Collection make(const std::vector<Img>& imgs, std::size_t dim = 1, const std::string& feature = "f") {
    std::vector<tagfuse::ImageRecord> recs;
    tagfuse::FeatureMatrix fm{feature, dim, {}};
    for (const auto& im : imgs) {
        recs.push_back({im.id, "u", im.tags});
        fm.data.insert(fm.data.end(), im.x.begin(), im.x.end());
    }
    return tagfuse::Collection::create(std::move(recs), {std::move(fm)});
}

/// Collection with several features; rows[f][i] is image i's vector in feature f.
inline tagfuse::Collection make_multi(const std::vector<std::pair<std::string, std::vector<std::string>>>& imgs,
                                      const std::vector<std::string>& features,
                                      const std::vector<std::vector<std::vector<double>>>& rows) {
    std::vector<tagfuse::ImageRecord> recs;
    for (const auto& [id, tags] : imgs) recs.push_back({id, "u", tags});
    std::vector<tagfuse::FeatureMatrix> fms;
    for (std::size_t f = 0; f < features.size(); ++f) {
        tagfuse::FeatureMatrix fm{features[f], rows[f].front().size(), {}};
        for (const auto& r : rows[f]) fm.data.insert(fm.data.end(), r.begin(), r.end());
        fms.push_back(std::move(fm));
    }
    return tagfuse::Collection::create(std::move(recs), std::move(fms));
}

/// Scratch directory removed at scope exit.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& name) {
        path = std::filesystem::temp_directory_path() / ("tagfuse_test_" + name);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline tagfuse::ScoreTable table(const std::string& est, const std::string& tag,
                                 const std::vector<std::pair<std::string, double>>& scores) {
    tagfuse::ScoreTable st{est, tag, {}, {}};
    for (const auto& [id, s] : scores) st.scores.emplace(id, s);
    return st;
}

}  // namespace testutil
