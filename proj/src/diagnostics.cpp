#include "hadpo/diagnostics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>

#include "hadpo/errors.hpp"

namespace hadpo::diag {

double ngram_fluency(std::span<const Token> tokens, int n) {
    if (n < 1) throw InputError("n-gram order must be >= 1");
    if (tokens.size() < static_cast<std::size_t>(n))
        throw InputError("sequence of length " + std::to_string(tokens.size()) + " has no " + std::to_string(n) +
                         "-grams");
    const std::size_t total = tokens.size() - static_cast<std::size_t>(n) + 1;
    std::set<std::vector<Token>> unique;
    for (std::size_t i = 0; i < total; ++i) unique.emplace(tokens.begin() + i, tokens.begin() + i + n);
    return static_cast<double>(unique.size()) / static_cast<double>(total);
}

DegenerationReport degeneration_report(std::span<const std::vector<Token>> sequences, int n_min, int n_max) {
    if (sequences.empty()) throw InputError("degeneration report needs at least one response");
    if (n_min < 1 || n_max < n_min) throw InputError("invalid n-gram range");
    DegenerationReport r;
    r.n_min = n_min;
    r.n_max = n_max;
    r.responses = sequences.size();
    const auto cols = static_cast<std::size_t>(n_max - n_min + 1);
    r.mean.assign(cols, 0.0);
    r.cells.assign(cols, 0);
    r.skipped.assign(cols, 0);
    for (const auto& seq : sequences) {
        for (std::size_t c = 0; c < cols; ++c) {
            const int n = n_min + static_cast<int>(c);
            if (seq.size() < static_cast<std::size_t>(n)) {
                ++r.skipped[c];
                continue;
            }
            r.mean[c] += ngram_fluency(seq, n);
            ++r.cells[c];
        }
    }
    for (std::size_t c = 0; c < cols; ++c)
        r.mean[c] = r.cells[c] ? r.mean[c] / static_cast<double>(r.cells[c]) : std::numeric_limits<double>::quiet_NaN();
    return r;
}

DegenerationReport degeneration_report(const policy::PolicyParams& params, std::span<const policy::Prompt> prompts,
                                       const SlotGrammar& grammar, int max_statements, int n_min, int n_max) {
    if (prompts.empty()) throw InputError("degeneration report needs a non-empty eval set");
    std::vector<std::vector<Token>> seqs;
    seqs.reserve(prompts.size());
    for (const auto& p : prompts) seqs.push_back(policy::decode_greedy(params, p, grammar, max_statements).flatten());
    return degeneration_report(seqs, n_min, n_max);
}

void write_degeneration_text(std::ostream& out, const DegenerationReport& r) {
    out << std::fixed << std::setprecision(1);
    for (std::size_t c = 0; c < r.columns(); ++c) out << std::setw(9) << (std::to_string(r.n_min + c) + "-gram");
    out << '\n';
    for (std::size_t c = 0; c < r.columns(); ++c) out << std::setw(9) << 100.0 * r.mean[c];
    out << '\n';
    std::size_t skipped = std::accumulate(r.skipped.begin(), r.skipped.end(), std::size_t{0});
    out << "responses: " << r.responses << ", skipped cells (response shorter than n): " << skipped << '\n';
    out << std::defaultfloat;
}

void write_degeneration_csv(std::ostream& out, const DegenerationReport& r) {
    out << "n,mean_fluency,cells,skipped\n" << std::setprecision(17);
    for (std::size_t c = 0; c < r.columns(); ++c)
        out << r.n_min + static_cast<int>(c) << ',' << r.mean[c] << ',' << r.cells[c] << ',' << r.skipped[c] << '\n';
}

double standardized_mean_difference(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw InputError("standardized mean difference needs non-empty samples");
    auto mean = [](std::span<const double> x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); };
    auto ss = [](std::span<const double> x, double m) {
        double s = 0.0;
        for (double v : x) s += (v - m) * (v - m);
        return s;
    };
    const double ma = mean(a), mb = mean(b);
    const double diff = ma - mb;
    if (diff == 0.0) return 0.0;
    const double dof = static_cast<double>(a.size() + b.size()) - 2.0;
    const double pooled = dof > 0.0 ? std::sqrt((ss(a, ma) + ss(b, mb)) / dof) : 0.0;
    if (pooled == 0.0) return diff > 0.0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    return diff / pooled;
}

MisalignmentReport misalignment(const policy::PolicyParams& params, std::span<const dpo::PreferencePair> pairs) {
    if (pairs.empty()) throw InputError("misalignment needs a non-empty dataset");
    MisalignmentReport r;
    for (const auto& p : pairs) {
        r.positive.push_back(policy::log_likelihood(params, p.prompt, p.y_pos) / static_cast<double>(p.y_pos.size()));
        r.negative.push_back(policy::log_likelihood(params, p.prompt, p.y_neg) / static_cast<double>(p.y_neg.size()));
    }
    r.statistic = standardized_mean_difference(r.positive, r.negative);
    return r;
}

void write_misalignment_text(std::ostream& out, const MisalignmentReport& r) {
    auto mean = [](const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); };
    out << std::fixed << std::setprecision(4) << "pairs: " << r.positive.size() << '\n'
        << "mean per-token log-likelihood, positive: " << mean(r.positive) << '\n'
        << "mean per-token log-likelihood, negative: " << mean(r.negative) << '\n'
        << "standardized mean difference: " << r.statistic << '\n'
        << std::defaultfloat;
}

void write_misalignment_csv(std::ostream& out, const MisalignmentReport& r) {
    out << "pair,positive,negative\n" << std::setprecision(17);
    for (std::size_t i = 0; i < r.positive.size(); ++i) out << i << ',' << r.positive[i] << ',' << r.negative[i] << '\n';
}

double grad_smoothness(const DiagnosticsTrace& trace) {
    const auto& g = trace.grad_norm;
    if (g.size() < 2) throw InputError("gradient smoothness needs at least two steps");
    double total = 0.0;
    for (std::size_t i = 1; i < g.size(); ++i) total += std::abs(g[i] - g[i - 1]);
    return total / static_cast<double>(g.size() - 1);
}

}  // namespace hadpo::diag
