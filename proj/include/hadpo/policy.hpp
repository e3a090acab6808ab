#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hadpo/grammar.hpp"
#include "hadpo/toyworld.hpp"

namespace hadpo::policy {

/// Conditioning input: instruction template id plus the active entries of the
/// scene indicator vector (sorted, unique).
struct Prompt {
    int template_id = 0;
    std::vector<int> scene_features;

    bool operator==(const Prompt&) const = default;
};

/// Column layout of the feature map
///   phi(prompt, y_<t) = [template one-hot | scene indicator | previous-token one-hot | bias]
/// The previous-token block is all zero at t = 0.
struct FeatureLayout {
    int vocab = 0;
    int n_templates = 0;
    std::size_t n_scene_features = 0;

    std::size_t template_offset() const { return 0; }
    std::size_t scene_offset() const { return static_cast<std::size_t>(n_templates); }
    std::size_t prev_offset() const { return scene_offset() + n_scene_features; }
    std::size_t bias_index() const { return prev_offset() + static_cast<std::size_t>(vocab); }
    std::size_t dim() const { return bias_index() + 1; }

    static FeatureLayout for_lexicon(const world::Lexicon& lex);

    bool operator==(const FeatureLayout&) const = default;
};

using Matrix = Eigen::MatrixXd;

/// Weight matrix of shape |V| x d. Column-major, so the logits for a sparse
/// indicator feature vector are a sum of a few contiguous columns.
struct PolicyParams {
    FeatureLayout layout;
    Matrix weights;

    PolicyParams() = default;
    explicit PolicyParams(const FeatureLayout& layout);

    bool all_finite() const { return weights.allFinite(); }
};

PolicyParams init_random(const FeatureLayout& layout, std::uint64_t seed, double stddev);

Prompt make_prompt(const world::Lexicon& lex, const world::Scene& scene, int template_id);

// Throws InputError if the prompt is inconsistent with the layout.
void check_prompt(const FeatureLayout& layout, const Prompt& prompt);

// Active feature columns at a step (`prev` empty at t = 0).
std::vector<std::size_t> active_features(const FeatureLayout& layout, const Prompt& prompt,
                                         std::optional<Token> prev);

Eigen::VectorXd step_logits(const PolicyParams& params, std::span<const std::size_t> active);

/// Numerically stable log-softmax.
Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits);

/// Sum over t of log softmax(W phi_t)[y_t]. Throws InputError on empty or
/// out-of-vocabulary sequences.
double log_likelihood(const PolicyParams& params, const Prompt& prompt, std::span<const Token> y);

/// out += scale * d log_likelihood / dW, i.e. scale * sum_t (e_{y_t} - p_t) phi_t^T.
/// Returns the log-likelihood as a by-product.
double accumulate_loglik_grad(const PolicyParams& params, const Prompt& prompt, std::span<const Token> y,
                              double scale, Matrix& out);

Matrix loglik_grad(const PolicyParams& params, const Prompt& prompt, std::span<const Token> y);

world::Response decode_greedy(const PolicyParams& params, const Prompt& prompt, const SlotGrammar& grammar,
                              int max_statements);

world::Response decode_sample(const PolicyParams& params, const Prompt& prompt, const SlotGrammar& grammar,
                              int max_statements, double temperature, std::uint64_t seed);

// Versioned binary format: magic "HDPOPOL1", u32 version, three i64 layout
// fields, then |V| x d little-endian doubles in column-major order.
void save_params(const PolicyParams& params, const std::string& path);
PolicyParams load_params(const std::string& path);

}  // namespace hadpo::policy
