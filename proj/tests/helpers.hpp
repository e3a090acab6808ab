#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "hadpo/dpo.hpp"
#include "hadpo/rng.hpp"

namespace testing {

using hadpo::Token;
using hadpo::policy::FeatureLayout;
using hadpo::policy::PolicyParams;
using hadpo::policy::Prompt;

inline FeatureLayout small_layout(int vocab, int templates = 2, std::size_t scene = 5) {
    FeatureLayout l;
    l.vocab = vocab;
    l.n_templates = templates;
    l.n_scene_features = scene;
    return l;
}

inline PolicyParams random_params(const FeatureLayout& l, hadpo::Rng& rng, double scale = 1.0) {
    PolicyParams p(l);
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c)
        for (Eigen::Index r = 0; r < p.weights.rows(); ++r) p.weights(r, c) = scale * rng.normal();
    return p;
}

inline Prompt random_prompt(const FeatureLayout& l, hadpo::Rng& rng) {
    Prompt p;
    p.template_id = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(l.n_templates)));
    for (std::size_t i = 0; i < l.n_scene_features; ++i)
        if (rng.uniform01() < 0.5) p.scene_features.push_back(static_cast<int>(i));
    return p;
}

inline std::vector<Token> random_seq(int vocab, std::size_t len, hadpo::Rng& rng) {
    std::vector<Token> y(len);
    for (auto& t : y) t = static_cast<Token>(rng.uniform_index(static_cast<std::uint64_t>(vocab)));
    return y;
}

inline hadpo::dpo::PreferencePair random_pair(const FeatureLayout& l, hadpo::Rng& rng) {
    hadpo::dpo::PreferencePair p;
    p.prompt = random_prompt(l, rng);
    do {
        p.y_pos = random_seq(l.vocab, 1 + rng.uniform_index(4), rng);
        p.y_neg = random_seq(l.vocab, 1 + rng.uniform_index(4), rng);
    } while (p.y_pos == p.y_neg);
    return p;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("hadpo-" + tag + "-" + std::to_string(hadpo::splitmix64(reinterpret_cast<std::uintptr_t>(this))));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testing
