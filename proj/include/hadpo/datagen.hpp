#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hadpo/dpo.hpp"
#include "hadpo/judge.hpp"
#include "hadpo/policy.hpp"
#include "hadpo/toyworld.hpp"

namespace hadpo::datagen {

struct DecodeConfig {
    bool sample = false;  // greedy unless set
    int max_statements = 6;
    double temperature = 1.0;
};

void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);

struct PipelineConfig {
    std::int64_t scenes = 200;
    std::int64_t scene_offset = 0;  // scene ids are [offset, offset + scenes)
    DecodeConfig decode;
    int rewrites = 3;
    std::string judge = "oracle";  // oracle | remote
    bool style_confound = false;
    std::string output_dir;  // empty: build in memory only
    std::uint64_t seed = 0;
    world::WorldConfig world;
    RemoteJudgeConfig remote;

    void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

/// Initial (pre-optimization) policy: Gaussian weights plus a partial
/// grounding prior, with the style marker pushed down by `marker_bias` in the
/// bias column so that the model rarely emits a token it was never trained on.
/// The prior adds `grounding` to the weight linking each scene-fact indicator
/// to the tokens that realize that fact's arguments.
struct InitConfig {
    double stddev = 0.5;
    double grounding = 3.0;
    double marker_bias = -8.0;
};

policy::PolicyParams initial_policy(const world::Lexicon& lex, std::uint64_t seed, const InitConfig& cfg = {});

// Scene ids map to seeds and template ids through the pipeline seed.
world::Scene scene_for(const world::WorldConfig& cfg, std::uint64_t seed, std::int64_t scene_id);
int template_for(const world::WorldConfig& cfg, std::uint64_t seed, std::int64_t scene_id);
std::vector<world::Scene> make_scenes(const world::WorldConfig& cfg, std::uint64_t seed, std::int64_t offset,
                                      std::int64_t count);

struct Description {
    world::Scene scene;
    policy::Prompt prompt;
    world::Response response;
};

/// Stage 1: one response per scene from the configured decoder.
std::vector<Description> generate_descriptions(const policy::PolicyParams& params, const world::Lexicon& lex,
                                               std::span<const world::Scene> scenes, const DecodeConfig& decode,
                                               std::uint64_t seed);

struct CorrectedPair {
    world::Response y_neg;
    world::Response y_pos;
};

/// Stage 2: empty when the judge finds no hallucination.
std::optional<CorrectedPair> detect_and_correct(Judge& judge, const world::Scene& scene,
                                                const world::Response& response, std::uint64_t seed);

using Rewriter = std::function<world::Response(const world::Response&, std::uint64_t seed)>;

Rewriter oracle_rewriter(const world::Lexicon& lex);

/// Stage 3: k rewrites of the pair, each side rewritten with its own seed.
std::vector<CorrectedPair> augment(const Rewriter& rewriter, const CorrectedPair& pair, int k, std::uint64_t seed);

/// A persisted preference pair. JSONL field order is fixed:
/// pair_id, scene_id, prompt{template_id, scene_features}, y_pos{text, tokens},
/// y_neg{text, tokens}, stage{pos, neg}, judge, style_marker.
struct PairRecord {
    std::int64_t pair_id = 0;
    std::int64_t scene_id = 0;
    policy::Prompt prompt;
    world::Response y_pos;
    world::Response y_neg;
    bool style_marker = false;  // y_pos token form carries a trailing marker
    std::string stage_pos;      // corrected | rewrite#i
    std::string stage_neg;      // raw | rewrite#i
    std::string judge;

    std::vector<Token> pos_tokens(const world::Lexicon& lex) const;
    std::vector<Token> neg_tokens() const { return y_neg.flatten(); }
    dpo::PreferencePair to_pair(const world::Lexicon& lex) const;
};

nlohmann::ordered_json record_to_json(const world::Lexicon& lex, const PairRecord& r);
PairRecord record_from_json(const world::Lexicon& lex, const nlohmann::json& j);

std::string write_jsonl(const world::Lexicon& lex, std::span<const PairRecord> records);
std::vector<PairRecord> read_jsonl(const world::Lexicon& lex, const std::string& path);

std::vector<dpo::PreferencePair> to_pairs(const world::Lexicon& lex, std::span<const PairRecord> records);

struct BuildResult {
    std::vector<PairRecord> records;
    nlohmann::ordered_json manifest;
};

/// Runs the three stages end to end. With an output directory, writes
/// dataset.jsonl and manifest.json there; a failed stage leaves a manifest
/// with "valid": false and the partial counts before rethrowing.
BuildResult build_dataset(const PipelineConfig& cfg, const policy::PolicyParams& params, const world::Lexicon& lex,
                          Judge* judge_override = nullptr);

}  // namespace hadpo::datagen
