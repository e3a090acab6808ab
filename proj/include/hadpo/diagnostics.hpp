#pragma once

#include <ostream>
#include <span>
#include <vector>

#include "hadpo/dpo.hpp"
#include "hadpo/trace.hpp"

namespace hadpo::diag {

/// |unique n-grams| / |n-grams| of a token sequence. Throws InputError when
/// n < 1 or the sequence is shorter than n.
double ngram_fluency(std::span<const Token> tokens, int n);

struct DegenerationReport {
    int n_min = 1;
    int n_max = 4;
    std::vector<double> mean;             // one column per n
    std::vector<std::size_t> cells;       // responses averaged per column
    std::vector<std::size_t> skipped;     // responses shorter than n
    std::size_t responses = 0;

    std::size_t columns() const { return mean.size(); }
};

/// Greedy-decodes every prompt and averages n-gram fluency per n.
DegenerationReport degeneration_report(const policy::PolicyParams& params, std::span<const policy::Prompt> prompts,
                                       const SlotGrammar& grammar, int max_statements, int n_min = 1, int n_max = 4);

/// Same report over already-decoded token sequences.
DegenerationReport degeneration_report(std::span<const std::vector<Token>> sequences, int n_min = 1, int n_max = 4);

void write_degeneration_text(std::ostream& out, const DegenerationReport& r);
void write_degeneration_csv(std::ostream& out, const DegenerationReport& r);

struct MisalignmentReport {
    std::vector<double> positive;  // per-token log-likelihood of each y_pos
    std::vector<double> negative;
    double statistic = 0.0;        // (mean_pos - mean_neg) / pooled std
};

/// Standardized mean difference with the pooled (n-1)-weighted standard
/// deviation. Zero when the means agree; +-inf when the means differ but both
/// samples are constant.
double standardized_mean_difference(std::span<const double> a, std::span<const double> b);

MisalignmentReport misalignment(const policy::PolicyParams& params, std::span<const dpo::PreferencePair> pairs);

void write_misalignment_text(std::ostream& out, const MisalignmentReport& r);
void write_misalignment_csv(std::ostream& out, const MisalignmentReport& r);

/// Mean absolute first difference of the gradient-norm series; lower is smoother.
double grad_smoothness(const DiagnosticsTrace& trace);

}  // namespace hadpo::diag
