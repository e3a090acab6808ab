#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "hadpo/datagen.hpp"
#include "hadpo/diagnostics.hpp"
#include "hadpo/dpo.hpp"
#include "hadpo/eval.hpp"

// Shared building blocks for the CLI experiments and the acceptance suite.
namespace hadpo::experiment {

/// Greedy descriptions of `scenes`, oracle-judged.
eval::ShrReport oracle_shr(const policy::PolicyParams& params, const world::Lexicon& lex,
                           std::span<const world::Scene> scenes, std::uint64_t seed, int max_statements);

/// Prompts the pipeline would use for `scenes`.
std::vector<policy::Prompt> prompts_for(const world::Lexicon& lex, std::span<const world::Scene> scenes,
                                        std::uint64_t seed);

/// Mean implicit-reward margin over pairs.
double mean_margin(const policy::PolicyParams& theta, const policy::PolicyParams& ref,
                   std::span<const dpo::PreferencePair> pairs, double beta);

/// Mean |log pi_theta(y) - log pi_ref(y)| over both responses of every pair.
double mean_abs_deviation(const policy::PolicyParams& theta, const policy::PolicyParams& ref,
                          std::span<const dpo::PreferencePair> pairs);

/// Copies of `pairs` with the style marker appended to y_pos (`on_positive`)
/// or to y_neg, with any existing trailing marker removed first.
std::vector<dpo::PreferencePair> with_marker(const world::Lexicon& lex, std::span<const dpo::PreferencePair> pairs,
                                             bool on_positive);

/// Mean 2- to 4-gram fluency from a degeneration report.
double mean_high_order_fluency(const diag::DegenerationReport& r);

}  // namespace hadpo::experiment
