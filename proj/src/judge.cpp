#include "hadpo/judge.hpp"

#include <algorithm>
#include <cstdlib>
#include <regex>
#include <thread>

#include <httplib.h>

#include "hadpo/errors.hpp"

namespace hadpo::datagen {

world::JudgeVerdict OracleJudge::judge(const world::Scene& scene, const world::Response& response,
                                       bool want_correction, std::uint64_t seed) {
    world::JudgeVerdict v = world::oracle_judge(lex_, response, scene);
    if (want_correction && v.hallucinated_count() > 0) v.corrected = world::oracle_correct(lex_, response, scene, seed);
    return v;
}

int OracleJudge::max_concurrency() const {
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

void RemoteJudgeConfig::validate() const {
    if (endpoint.empty()) throw ConfigError("remote judge endpoint is not configured");
    if (!(timeout_seconds > 0.0)) throw ConfigError("remote judge timeout must be > 0");
    if (max_retries < 0) throw ConfigError("remote judge retries must be >= 0");
    if (max_concurrency < 1) throw ConfigError("remote judge concurrency must be >= 1");
    if (backoff_seconds < 0.0) throw ConfigError("remote judge backoff must be >= 0");
}

void to_json(nlohmann::json& j, const RemoteJudgeConfig& c) {
    j = nlohmann::json{{"endpoint", c.endpoint},
                       {"token_env", c.token_env},
                       {"timeout_seconds", c.timeout_seconds},
                       {"max_retries", c.max_retries},
                       {"max_concurrency", c.max_concurrency},
                       {"backoff_seconds", c.backoff_seconds},
                       {"detect_template", c.detect_template},
                       {"shr_template", c.shr_template}};
}

void from_json(const nlohmann::json& j, RemoteJudgeConfig& c) {
    c = RemoteJudgeConfig{};
    c.endpoint = j.value("endpoint", c.endpoint);
    c.token_env = j.value("token_env", c.token_env);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_concurrency = j.value("max_concurrency", c.max_concurrency);
    c.backoff_seconds = j.value("backoff_seconds", c.backoff_seconds);
    c.detect_template = j.value("detect_template", c.detect_template);
    c.shr_template = j.value("shr_template", c.shr_template);
}

const std::map<std::string, std::string>& prompt_templates() {
    static const std::map<std::string, std::string> templates = {
        {"describe", "Describe the image in detail."},
        {"detect_correct",
         "You are checking an image description against the image's ground-truth annotations.\n"
         "Annotations:\n{annotations}\n"
         "Description:\n{description}\n"
         "Label every sentence of the description as \"correct\" or \"hallucinated\". A sentence is "
         "hallucinated when it asserts an object, attribute or relationship that the annotations do not "
         "support. Then rewrite the description so that every hallucinated sentence is replaced by a "
         "sentence supported by the annotations, keeping correct sentences unchanged.\n"
         "Reply with JSON only: {\"labels\": [...], \"corrected\": \"...\"}"},
        {"rewrite_negative",
         "Rewrite the following description in a different wording and sentence order. Keep every claim, "
         "including unsupported ones, exactly as stated.\nDescription:\n{description}"},
        {"rewrite_positive",
         "Rewrite the following description in a different wording and sentence order without adding or "
         "removing any claim.\nDescription:\n{description}"},
        {"shr_judge",
         "Annotations:\n{annotations}\n"
         "Description:\n{description}\n"
         "For each sentence of the description answer \"correct\" if the annotations support it and "
         "\"hallucinated\" otherwise.\n"
         "Reply with JSON only: {\"labels\": [...]}"},
    };
    return templates;
}

std::string render_template(const std::string& template_id, const std::string& annotations,
                            const std::string& description) {
    const auto& all = prompt_templates();
    auto it = all.find(template_id);
    if (it == all.end()) throw ConfigError("unknown prompt template '" + template_id + "'");
    std::string out = it->second;
    auto substitute = [&out](const std::string& key, const std::string& value) {
        for (std::size_t pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
            out.replace(pos, key.size(), value);
    };
    substitute("{annotations}", annotations);
    substitute("{description}", description);
    return out;
}

RemoteVerdict parse_remote_verdict(const std::string& body) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("judge reply is not JSON: ") + e.what(), body);
    }
    if (!j.is_object() || !j.contains("labels") || !j["labels"].is_array())
        throw ParseError("judge reply lacks a 'labels' array", body);
    RemoteVerdict v;
    v.raw = body;
    for (const auto& l : j["labels"]) {
        if (!l.is_string()) throw ParseError("judge label is not a string", body);
        const auto s = l.get<std::string>();
        if (s == "correct")
            v.labels.push_back(world::Label::correct);
        else if (s == "hallucinated" || s == "hallucination")
            v.labels.push_back(world::Label::hallucinated);
        else
            throw ParseError("unknown judge label '" + s + "'", body);
    }
    if (j.contains("corrected") && !j["corrected"].is_null()) {
        if (!j["corrected"].is_string()) throw ParseError("'corrected' must be a string", body);
        v.corrected = j["corrected"].get<std::string>();
    }
    return v;
}

RemoteVerdict remote_judge(const RemoteJudgeConfig& cfg, const std::string& annotations,
                           const std::string& description, const std::string& template_id) {
    cfg.validate();
    static const std::regex url_re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(cfg.endpoint, m, url_re)) throw ConfigError("malformed endpoint '" + cfg.endpoint + "'");
    const std::string base = m[1].str();
    const std::string path = m[2].matched ? m[2].str() : "/";

    const char* token = cfg.token_env.empty() ? nullptr : std::getenv(cfg.token_env.c_str());
    if (!cfg.token_env.empty() && token == nullptr)
        throw ConfigError("environment variable '" + cfg.token_env + "' holding the judge token is not set");

    const nlohmann::json request = {{"annotations", annotations},
                                    {"description", description},
                                    {"template_id", template_id},
                                    {"prompt", render_template(template_id, annotations, description)}};
    const std::string body = request.dump();

    httplib::Client client(base);
    const auto timeout = std::chrono::duration<double>(cfg.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (token) headers.emplace("Authorization", std::string("Bearer ") + token);

    std::string last_error;
    double backoff = cfg.backoff_seconds;
    for (int attempt = 1; attempt <= cfg.max_retries + 1; ++attempt) {
        auto res = client.Post(path, headers, body, "application/json");
        if (res && res->status >= 200 && res->status < 300) {
            RemoteVerdict v = parse_remote_verdict(res->body);
            v.attempts = attempt;
            return v;
        }
        if (res) {
            last_error = "HTTP " + std::to_string(res->status);
            const bool retryable = res->status >= 500 || res->status == 429;
            if (!retryable) throw TransportError("judge request rejected: " + last_error + ": " + res->body);
        } else {
            last_error = httplib::to_string(res.error());
        }
        if (attempt <= cfg.max_retries && backoff > 0.0) {
            std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
            backoff *= 2.0;
        }
    }
    throw TransportError("judge request failed after " + std::to_string(cfg.max_retries + 1) +
                         " attempts: " + last_error);
}

std::string scene_annotations(const world::Lexicon& lex, const world::Scene& scene) {
    world::Response r;
    for (const auto& f : scene.facts) r.statements.push_back(world::realize_with(lex, f, 0));
    return world::render(lex, r);
}

RemoteJudge::RemoteJudge(RemoteJudgeConfig cfg, const world::Lexicon& lex, bool detect_and_correct)
    : cfg_(std::move(cfg)), lex_(lex), detect_(detect_and_correct) {
    cfg_.validate();
}

world::JudgeVerdict RemoteJudge::judge(const world::Scene& scene, const world::Response& response,
                                       bool want_correction, std::uint64_t /*seed*/) {
    const std::string& tmpl = detect_ ? cfg_.detect_template : cfg_.shr_template;
    RemoteVerdict rv = remote_judge(cfg_, scene_annotations(lex_, scene), world::render(lex_, response), tmpl);
    if (rv.labels.size() != response.statements.size())
        throw ParseError("judge returned " + std::to_string(rv.labels.size()) + " labels for " +
                             std::to_string(response.statements.size()) + " sentences",
                         rv.raw);
    world::JudgeVerdict v;
    v.labels = std::move(rv.labels);
    if (want_correction && v.hallucinated_count() > 0) {
        if (!rv.corrected) throw ParseError("judge flagged hallucinations but sent no correction", rv.raw);
        try {
            v.corrected = world::read_text(lex_, *rv.corrected);
        } catch (const InputError& e) {
            throw ParseError(std::string("corrected text does not parse: ") + e.what(), rv.raw);
        }
    }
    return v;
}

}  // namespace hadpo::datagen
