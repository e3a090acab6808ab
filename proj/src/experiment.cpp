#include "hadpo/experiment.hpp"

#include <cmath>

#include "hadpo/errors.hpp"

namespace hadpo::experiment {

eval::ShrReport oracle_shr(const policy::PolicyParams& params, const world::Lexicon& lex,
                           std::span<const world::Scene> scenes, std::uint64_t seed, int max_statements) {
    datagen::DecodeConfig decode;
    decode.max_statements = max_statements;
    const auto described = datagen::generate_descriptions(params, lex, scenes, decode, seed);
    std::vector<eval::JudgedResponse> judged;
    judged.reserve(described.size());
    for (const auto& d : described) judged.push_back({d.scene, d.response});
    return eval::shr(
        judged, [&lex](const world::Scene& s, const world::Response& r) { return world::oracle_judge(lex, r, s); },
        "oracle");
}

std::vector<policy::Prompt> prompts_for(const world::Lexicon& lex, std::span<const world::Scene> scenes,
                                        std::uint64_t seed) {
    std::vector<policy::Prompt> out;
    out.reserve(scenes.size());
    for (const auto& s : scenes) out.push_back(policy::make_prompt(lex, s, datagen::template_for(lex.config(), seed, s.id)));
    return out;
}

double mean_margin(const policy::PolicyParams& theta, const policy::PolicyParams& ref,
                   std::span<const dpo::PreferencePair> pairs, double beta) {
    if (pairs.empty()) throw InputError("no pairs to average");
    double total = 0.0;
    for (const auto& p : pairs) total += dpo::reward_margin(theta, ref, p, beta);
    return total / static_cast<double>(pairs.size());
}

double mean_abs_deviation(const policy::PolicyParams& theta, const policy::PolicyParams& ref,
                          std::span<const dpo::PreferencePair> pairs) {
    if (pairs.empty()) throw InputError("no pairs to average");
    double total = 0.0;
    for (const auto& p : pairs) {
        for (const auto* y : {&p.y_pos, &p.y_neg})
            total += std::abs(policy::log_likelihood(theta, p.prompt, *y) - policy::log_likelihood(ref, p.prompt, *y));
    }
    return total / (2.0 * static_cast<double>(pairs.size()));
}

std::vector<dpo::PreferencePair> with_marker(const world::Lexicon& lex, std::span<const dpo::PreferencePair> pairs,
                                             bool on_positive) {
    const Token marker = lex.marker_token();
    auto strip = [marker](std::vector<Token> y) {
        if (!y.empty() && y.back() == marker) y.pop_back();
        return y;
    };
    std::vector<dpo::PreferencePair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        dpo::PreferencePair q{p.prompt, strip(p.y_pos), strip(p.y_neg), p.provenance};
        (on_positive ? q.y_pos : q.y_neg).push_back(marker);
        out.push_back(std::move(q));
    }
    return out;
}

double mean_high_order_fluency(const diag::DegenerationReport& r) {
    double total = 0.0;
    int count = 0;
    for (int n = 2; n <= 4; ++n) {
        const int c = n - r.n_min;
        if (c < 0 || c >= static_cast<int>(r.columns())) throw InputError("report lacks 2- to 4-gram columns");
        total += r.mean[static_cast<std::size_t>(c)];
        ++count;
    }
    return total / count;
}

}  // namespace hadpo::experiment
