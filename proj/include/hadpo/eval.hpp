#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hadpo/policy.hpp"
#include "hadpo/toyworld.hpp"

namespace hadpo::eval {

using JudgeFn = std::function<world::JudgeVerdict(const world::Scene&, const world::Response&)>;

struct ShrRow {
    std::int64_t scene_id = 0;
    std::size_t sentences = 0;
    std::size_t hallucinated = 0;
};

/// Sentence-level hallucination ratio, pooled over images: sum(h_i) / sum(s_i).
struct ShrReport {
    std::vector<ShrRow> rows;
    double shr = 0.0;
    std::string judge;

    std::size_t images() const { return rows.size(); }
};

struct JudgedResponse {
    world::Scene scene;
    world::Response response;
};

ShrReport shr(std::span<const JudgedResponse> responses, const JudgeFn& judge, std::string judge_name);
/// Pools precomputed rows; SHR is 0 when there are no sentences at all.
ShrReport shr_from_rows(std::vector<ShrRow> rows, std::string judge_name);

nlohmann::ordered_json to_json(const ShrReport& r);
void write_shr_text(std::ostream& out, const ShrReport& r);

enum class PopeSplit { random, popular, adversarial };

std::string to_string(PopeSplit s);
PopeSplit pope_split_from_string(const std::string& s);

struct PopeRecord {
    std::int64_t scene_id = 0;
    int category = 0;
    bool truth = false;
    std::optional<bool> answer;
    PopeSplit split = PopeSplit::random;
};

/// Balanced probe list: probe pair j targets scenes[j % N] with one present
/// category (truth yes) and one absent category (truth no). Absent categories
/// are uniform (random), ranked by corpus frequency (popular), or ranked by
/// co-occurrence with the scene's present categories (adversarial); repeated
/// visits to a scene walk down the ranking.
std::vector<PopeRecord> pope_questions(std::span<const world::Scene> scenes, int n_categories, PopeSplit split,
                                       std::int64_t count, std::uint64_t seed);

/// Relative-odds yes/no head over the policy: s_c is the log-probability of
/// the one-statement response "object c" (summed over synonyms); the answer is
/// yes iff sigmoid(s_c - mean_{c' != c} s_{c'}) > threshold.
double pope_yes_probability(const policy::PolicyParams& params, const world::Lexicon& lex,
                            const policy::Prompt& prompt, int category);

PopeRecord pope_answer(const policy::PolicyParams& params, const world::Lexicon& lex, const policy::Prompt& prompt,
                       PopeRecord stub, double threshold = 0.5);

struct PopeMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double yes_ratio = 0.0;
    bool precision_undefined = false;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Confusion-matrix metrics in percent with "yes" as the positive class.
/// Throws InputError on an empty list or unanswered records.
PopeMetrics pope_score(std::span<const PopeRecord> records);
PopeMetrics pope_score_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn);

nlohmann::ordered_json to_json(const PopeMetrics& m);
nlohmann::ordered_json to_json(const PopeRecord& r);
void write_pope_text(std::ostream& out, const PopeMetrics& m, const std::string& split);

// Rounds to 2 decimals, the reporting precision of the metric tables.
double round2(double x);

}  // namespace hadpo::eval
