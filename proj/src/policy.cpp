#include "hadpo/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "hadpo/errors.hpp"
#include "hadpo/rng.hpp"

namespace hadpo::policy {

namespace {

constexpr char kMagic[8] = {'H', 'D', 'P', 'O', 'P', 'O', 'L', '1'};
constexpr std::uint32_t kFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "params format assumes a little-endian host");

void check_tokens(const FeatureLayout& layout, std::span<const Token> y) {
    if (y.empty()) throw InputError("token sequence is empty");
    for (Token t : y) {
        if (t < 0 || t >= layout.vocab)
            throw InputError("token " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(layout.vocab));
    }
}

// Chooses one token among candidates; greedy when temperature is empty.
Token choose(const Eigen::VectorXd& logits, const std::vector<Token>& candidates, std::optional<double> temperature,
             Rng* rng) {
    if (!temperature) {
        Token best = candidates.front();
        for (Token t : candidates) {
            if (logits[t] > logits[best] || (logits[t] == logits[best] && t < best)) best = t;
        }
        return best;
    }
    double top = -std::numeric_limits<double>::infinity();
    for (Token t : candidates) top = std::max(top, logits[t] / *temperature);
    std::vector<double> w(candidates.size());
    double total = 0.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        w[i] = std::exp(logits[candidates[i]] / *temperature - top);
        total += w[i];
    }
    double u = rng->uniform01() * total;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (u < w[i]) return candidates[i];
        u -= w[i];
    }
    for (std::size_t i = candidates.size(); i-- > 0;)
        if (w[i] > 0.0) return candidates[i];
    return candidates.back();
}

std::vector<Token> with_free(const std::vector<Token>& slot, const std::vector<Token>& free_tokens) {
    std::vector<Token> out = slot;
    out.insert(out.end(), free_tokens.begin(), free_tokens.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

world::Response decode(const PolicyParams& params, const Prompt& prompt, const SlotGrammar& grammar,
                       int max_statements, std::optional<double> temperature, Rng* rng) {
    if (max_statements < 1) throw InputError("max_statements must be >= 1");
    if (grammar.kinds.empty()) throw InputError("grammar has no statement kinds");
    check_prompt(params.layout, prompt);

    std::vector<Token> heads;
    for (const auto& k : grammar.kinds) heads.push_back(k.head);
    const std::vector<Token> head_candidates = with_free(heads, grammar.free_tokens);
    std::vector<std::vector<std::vector<Token>>> slot_candidates;
    for (const auto& k : grammar.kinds) {
        auto& slots = slot_candidates.emplace_back();
        for (const auto& s : k.slots) slots.push_back(with_free(s, grammar.free_tokens));
    }

    world::Response out;
    std::optional<Token> prev;
    auto emit = [&](const std::vector<Token>& candidates) {
        const auto active = active_features(params.layout, prompt, prev);
        const Token t = choose(step_logits(params, active), candidates, temperature, rng);
        prev = t;
        return t;
    };
    for (int s = 0; s < max_statements; ++s) {
        world::Statement stmt;
        const Token head = emit(head_candidates);
        stmt.tokens.push_back(head);
        const auto kind = std::find(heads.begin(), heads.end(), head);
        if (kind != heads.end()) {
            for (const auto& candidates : slot_candidates[kind - heads.begin()])
                stmt.tokens.push_back(emit(candidates));
        }
        out.statements.push_back(std::move(stmt));
    }
    return out;
}

}  // namespace

FeatureLayout FeatureLayout::for_lexicon(const world::Lexicon& lex) {
    return {lex.vocab_size(), lex.config().n_templates, lex.scene_feature_count()};
}

PolicyParams::PolicyParams(const FeatureLayout& layout)
    : layout(layout), weights(Matrix::Zero(layout.vocab, static_cast<Eigen::Index>(layout.dim()))) {
    if (layout.vocab < 1 || layout.n_templates < 1) throw ConfigError("policy layout needs vocab >= 1 and templates >= 1");
}

PolicyParams init_random(const FeatureLayout& layout, std::uint64_t seed, double stddev) {
    PolicyParams p(layout);
    Rng rng(seed);
    for (Eigen::Index c = 0; c < p.weights.cols(); ++c)
        for (Eigen::Index r = 0; r < p.weights.rows(); ++r) p.weights(r, c) = stddev * rng.normal();
    return p;
}

Prompt make_prompt(const world::Lexicon& lex, const world::Scene& scene, int template_id) {
    if (template_id < 0 || template_id >= lex.config().n_templates)
        throw InputError("template id " + std::to_string(template_id) + " out of range");
    return {template_id, lex.scene_features(scene)};
}

void check_prompt(const FeatureLayout& layout, const Prompt& prompt) {
    if (prompt.template_id < 0 || prompt.template_id >= layout.n_templates)
        throw InputError("prompt template id " + std::to_string(prompt.template_id) + " out of range");
    for (std::size_t i = 0; i < prompt.scene_features.size(); ++i) {
        const int f = prompt.scene_features[i];
        if (f < 0 || static_cast<std::size_t>(f) >= layout.n_scene_features)
            throw InputError("scene feature " + std::to_string(f) + " out of range");
        if (i && prompt.scene_features[i - 1] >= f) throw InputError("scene features must be sorted and unique");
    }
}

std::vector<std::size_t> active_features(const FeatureLayout& layout, const Prompt& prompt,
                                         std::optional<Token> prev) {
    std::vector<std::size_t> active;
    active.reserve(prompt.scene_features.size() + 3);
    active.push_back(layout.template_offset() + static_cast<std::size_t>(prompt.template_id));
    for (int f : prompt.scene_features) active.push_back(layout.scene_offset() + static_cast<std::size_t>(f));
    if (prev) active.push_back(layout.prev_offset() + static_cast<std::size_t>(*prev));
    active.push_back(layout.bias_index());
    return active;
}

Eigen::VectorXd step_logits(const PolicyParams& params, std::span<const std::size_t> active) {
    Eigen::VectorXd z = Eigen::VectorXd::Zero(params.weights.rows());
    for (std::size_t c : active) z += params.weights.col(static_cast<Eigen::Index>(c));
    return z;
}

Eigen::VectorXd log_softmax(const Eigen::VectorXd& logits) {
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    return logits.array() - lse;
}

double log_likelihood(const PolicyParams& params, const Prompt& prompt, std::span<const Token> y) {
    check_tokens(params.layout, y);
    check_prompt(params.layout, prompt);
    double total = 0.0;
    std::optional<Token> prev;
    for (Token t : y) {
        const auto active = active_features(params.layout, prompt, prev);
        total += log_softmax(step_logits(params, active))[t];
        prev = t;
    }
    return total;
}

double accumulate_loglik_grad(const PolicyParams& params, const Prompt& prompt, std::span<const Token> y,
                              double scale, Matrix& out) {
    check_tokens(params.layout, y);
    check_prompt(params.layout, prompt);
    if (out.rows() != params.weights.rows() || out.cols() != params.weights.cols())
        throw InputError("gradient buffer shape does not match parameters");
    double total = 0.0;
    std::optional<Token> prev;
    for (Token t : y) {
        const auto active = active_features(params.layout, prompt, prev);
        const Eigen::VectorXd logp = log_softmax(step_logits(params, active));
        total += logp[t];
        Eigen::VectorXd delta = -logp.array().exp();
        delta[t] += 1.0;
        delta *= scale;
        for (std::size_t c : active) out.col(static_cast<Eigen::Index>(c)) += delta;
        prev = t;
    }
    return total;
}

Matrix loglik_grad(const PolicyParams& params, const Prompt& prompt, std::span<const Token> y) {
    Matrix g = Matrix::Zero(params.weights.rows(), params.weights.cols());
    accumulate_loglik_grad(params, prompt, y, 1.0, g);
    return g;
}

world::Response decode_greedy(const PolicyParams& params, const Prompt& prompt, const SlotGrammar& grammar,
                              int max_statements) {
    return decode(params, prompt, grammar, max_statements, std::nullopt, nullptr);
}

world::Response decode_sample(const PolicyParams& params, const Prompt& prompt, const SlotGrammar& grammar,
                              int max_statements, double temperature, std::uint64_t seed) {
    if (!(temperature > 0.0)) throw InputError("temperature must be > 0");
    Rng rng(seed);
    return decode(params, prompt, grammar, max_statements, temperature, &rng);
}

void save_params(const PolicyParams& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write params to '" + path + "'");
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kFormatVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::int64_t header[3] = {params.layout.vocab, params.layout.n_templates,
                                    static_cast<std::int64_t>(params.layout.n_scene_features)};
    out.write(reinterpret_cast<const char*>(header), sizeof header);
    out.write(reinterpret_cast<const char*>(params.weights.data()),
              static_cast<std::streamsize>(params.weights.size() * sizeof(double)));
    if (!out) throw Error("short write to '" + path + "'");
}

PolicyParams load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open params '" + path + "'");
    char magic[8];
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) throw InputError("'" + path + "' is not a params file");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (version != kFormatVersion) throw InputError("unsupported params format version " + std::to_string(version));
    std::int64_t header[3];
    in.read(reinterpret_cast<char*>(header), sizeof header);
    if (!in || header[0] < 1 || header[1] < 1 || header[2] < 0) throw InputError("corrupt params header");
    PolicyParams p(FeatureLayout{static_cast<int>(header[0]), static_cast<int>(header[1]),
                                 static_cast<std::size_t>(header[2])});
    in.read(reinterpret_cast<char*>(p.weights.data()), static_cast<std::streamsize>(p.weights.size() * sizeof(double)));
    if (!in) throw InputError("params file '" + path + "' is truncated");
    if (!p.all_finite()) throw InputError("params file '" + path + "' holds non-finite weights");
    return p;
}

}  // namespace hadpo::policy
