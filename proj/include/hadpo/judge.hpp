#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hadpo/toyworld.hpp"

namespace hadpo::datagen {

/// Hallucination detector. `judge` labels every statement and, when asked,
/// supplies a corrected response that the same judge would label all-correct.
class Judge {
public:
    virtual ~Judge() = default;
    virtual std::string name() const = 0;
    virtual world::JudgeVerdict judge(const world::Scene& scene, const world::Response& response, bool want_correction,
                                      std::uint64_t seed) = 0;
    // Upper bound on concurrent judge calls the pipeline may issue.
    virtual int max_concurrency() const { return 1; }
};

class OracleJudge final : public Judge {
public:
    explicit OracleJudge(const world::Lexicon& lex) : lex_(lex) {}
    std::string name() const override { return "oracle"; }
    world::JudgeVerdict judge(const world::Scene& scene, const world::Response& response, bool want_correction,
                              std::uint64_t seed) override;
    int max_concurrency() const override;

private:
    const world::Lexicon& lex_;
};

struct RemoteJudgeConfig {
    std::string endpoint;                            // http://host:port/path
    std::string token_env = "HADPO_JUDGE_TOKEN";     // env var holding the bearer token
    double timeout_seconds = 30.0;
    int max_retries = 3;
    int max_concurrency = 4;
    double backoff_seconds = 0.5;                    // doubled after every failed attempt
    std::string detect_template = "detect_correct";
    std::string shr_template = "shr_judge";

    void validate() const;
};

void to_json(nlohmann::json& j, const RemoteJudgeConfig& c);
void from_json(const nlohmann::json& j, RemoteJudgeConfig& c);

/// Prompt templates keyed by id; `{annotations}` and `{description}` are
/// substituted on render.
const std::map<std::string, std::string>& prompt_templates();
std::string render_template(const std::string& template_id, const std::string& annotations,
                            const std::string& description);

struct RemoteVerdict {
    std::vector<world::Label> labels;
    std::optional<std::string> corrected;
    std::string raw;
    int attempts = 0;
};

/// Parses {"labels": [...], "corrected": "..."}; throws ParseError keeping the body.
RemoteVerdict parse_remote_verdict(const std::string& body);

/// POSTs {annotations, description, template_id, prompt} with bearer auth,
/// retrying connection failures and 5xx/429 replies with exponential backoff.
RemoteVerdict remote_judge(const RemoteJudgeConfig& cfg, const std::string& annotations,
                           const std::string& description, const std::string& template_id);

/// One canonical statement per scene fact, the form the remote judge sees.
std::string scene_annotations(const world::Lexicon& lex, const world::Scene& scene);

class RemoteJudge final : public Judge {
public:
    RemoteJudge(RemoteJudgeConfig cfg, const world::Lexicon& lex, bool detect_and_correct = true);
    std::string name() const override { return "remote"; }
    world::JudgeVerdict judge(const world::Scene& scene, const world::Response& response, bool want_correction,
                              std::uint64_t seed) override;
    int max_concurrency() const override { return cfg_.max_concurrency; }

private:
    RemoteJudgeConfig cfg_;
    const world::Lexicon& lex_;
    bool detect_;
};

}  // namespace hadpo::datagen
