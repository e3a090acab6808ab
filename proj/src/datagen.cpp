#include "hadpo/datagen.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "hadpo/errors.hpp"
#include "hadpo/io.hpp"
#include "hadpo/rng.hpp"

namespace hadpo::datagen {

void to_json(nlohmann::json& j, const DecodeConfig& c) {
    j = nlohmann::json{{"mode", c.sample ? "sample" : "greedy"},
                       {"max_statements", c.max_statements},
                       {"temperature", c.temperature}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
    c = DecodeConfig{};
    const auto mode = j.value("mode", std::string("greedy"));
    if (mode != "greedy" && mode != "sample") throw ConfigError("decode mode must be greedy or sample");
    c.sample = mode == "sample";
    c.max_statements = j.value("max_statements", c.max_statements);
    c.temperature = j.value("temperature", c.temperature);
}

void PipelineConfig::validate() const {
    if (scenes < 1) throw ConfigError("scene count must be >= 1");
    if (scene_offset < 0) throw ConfigError("scene offset must be >= 0");
    if (rewrites < 0) throw ConfigError("rewrites must be >= 0");
    if (decode.max_statements < 1) throw ConfigError("max_statements must be >= 1");
    if (decode.sample && !(decode.temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (judge != "oracle" && judge != "remote") throw ConfigError("judge must be 'oracle' or 'remote'");
    if (judge == "remote") remote.validate();
    world.validate();
}

void to_json(nlohmann::json& j, const PipelineConfig& c) {
    j = nlohmann::json{{"scenes", c.scenes},         {"scene_offset", c.scene_offset},
                       {"decode", c.decode},         {"rewrites", c.rewrites},
                       {"judge", c.judge},           {"style_confound", c.style_confound},
                       {"output_dir", c.output_dir}, {"seed", c.seed},
                       {"world", c.world}};
    if (c.judge == "remote") j["remote"] = c.remote;
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
    c = PipelineConfig{};
    c.scenes = j.value("scenes", c.scenes);
    c.scene_offset = j.value("scene_offset", c.scene_offset);
    if (j.contains("decode")) j.at("decode").get_to(c.decode);
    c.rewrites = j.value("rewrites", c.rewrites);
    c.judge = j.value("judge", c.judge);
    c.style_confound = j.value("style_confound", c.style_confound);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.seed = j.value("seed", c.seed);
    if (j.contains("world")) j.at("world").get_to(c.world);
    if (j.contains("remote")) j.at("remote").get_to(c.remote);
}

policy::PolicyParams initial_policy(const world::Lexicon& lex, std::uint64_t seed, const InitConfig& cfg) {
    const auto layout = policy::FeatureLayout::for_lexicon(lex);
    policy::PolicyParams p = policy::init_random(layout, derive_seed(seed, "init-policy"), cfg.stddev);
    p.weights(lex.marker_token(), static_cast<Eigen::Index>(layout.bias_index())) += cfg.marker_bias;
    if (cfg.grounding != 0.0) {
        const auto& wc = lex.config();
        auto link = [&](const world::Fact& f, Token (world::Lexicon::*tok)(int, int) const, int symbol) {
            const auto col = static_cast<Eigen::Index>(layout.scene_offset() + lex.feature_index(f));
            for (int s = 0; s < wc.n_synonyms; ++s) p.weights((lex.*tok)(symbol, s), col) += cfg.grounding;
        };
        for (int c = 0; c < wc.n_categories; ++c) {
            link(world::Fact::object(c), &world::Lexicon::category_token, c);
            for (int a = 0; a < wc.n_attributes; ++a) link(world::Fact::attribute(c, a), &world::Lexicon::attribute_token, a);
            for (int r = 0; r < wc.n_predicates; ++r)
                for (int o = 0; o < wc.n_categories; ++o)
                    link(world::Fact::relation(c, r, o), &world::Lexicon::predicate_token, r);
        }
    }
    return p;
}

world::Scene scene_for(const world::WorldConfig& cfg, std::uint64_t seed, std::int64_t scene_id) {
    return world::gen_scene(derive_seed(seed, "scene", static_cast<std::uint64_t>(scene_id)), cfg, scene_id);
}

int template_for(const world::WorldConfig& cfg, std::uint64_t seed, std::int64_t scene_id) {
    return static_cast<int>(derive_seed(seed, "template", static_cast<std::uint64_t>(scene_id)) %
                            static_cast<std::uint64_t>(cfg.n_templates));
}

std::vector<world::Scene> make_scenes(const world::WorldConfig& cfg, std::uint64_t seed, std::int64_t offset,
                                      std::int64_t count) {
    std::vector<world::Scene> out;
    out.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) out.push_back(scene_for(cfg, seed, offset + i));
    return out;
}

std::vector<Description> generate_descriptions(const policy::PolicyParams& params, const world::Lexicon& lex,
                                               std::span<const world::Scene> scenes, const DecodeConfig& decode,
                                               std::uint64_t seed) {
    if (scenes.empty()) throw InputError("no scenes to describe");
    const SlotGrammar grammar = lex.grammar();
    std::vector<Description> out;
    out.reserve(scenes.size());
    for (const auto& scene : scenes) {
        Description d{scene, policy::make_prompt(lex, scene, template_for(lex.config(), seed, scene.id)), {}};
        d.response = decode.sample
                         ? policy::decode_sample(params, d.prompt, grammar, decode.max_statements, decode.temperature,
                                                 derive_seed(seed, "decode", static_cast<std::uint64_t>(scene.id)))
                         : policy::decode_greedy(params, d.prompt, grammar, decode.max_statements);
        out.push_back(std::move(d));
    }
    return out;
}

std::optional<CorrectedPair> detect_and_correct(Judge& judge, const world::Scene& scene,
                                                const world::Response& response, std::uint64_t seed) {
    if (response.statements.empty()) throw InputError("cannot judge an empty response");
    world::JudgeVerdict v = judge.judge(scene, response, true, seed);
    if (v.labels.size() != response.statements.size())
        throw Error("judge '" + judge.name() + "' returned a label count that differs from the statement count");
    if (v.hallucinated_count() == 0) return std::nullopt;
    if (!v.corrected) throw Error("judge '" + judge.name() + "' flagged hallucinations without a correction");
    if (*v.corrected == response) throw Error("judge '" + judge.name() + "' returned an unchanged correction");
    return CorrectedPair{response, std::move(*v.corrected)};
}

Rewriter oracle_rewriter(const world::Lexicon& lex) {
    return [&lex](const world::Response& r, std::uint64_t seed) { return world::rewrite(lex, r, seed); };
}

std::vector<CorrectedPair> augment(const Rewriter& rewriter, const CorrectedPair& pair, int k, std::uint64_t seed) {
    if (k < 0) throw InputError("rewrite count must be >= 0");
    std::vector<CorrectedPair> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        const auto idx = static_cast<std::uint64_t>(i);
        out.push_back({rewriter(pair.y_neg, derive_seed(seed, "rewrite-neg", idx)),
                       rewriter(pair.y_pos, derive_seed(seed, "rewrite-pos", idx))});
    }
    return out;
}

std::vector<Token> PairRecord::pos_tokens(const world::Lexicon& lex) const {
    std::vector<Token> t = y_pos.flatten();
    if (style_marker) t.push_back(lex.marker_token());
    return t;
}

dpo::PreferencePair PairRecord::to_pair(const world::Lexicon& lex) const {
    return {prompt, pos_tokens(lex), neg_tokens(), stage_pos + "/" + stage_neg};
}

nlohmann::ordered_json record_to_json(const world::Lexicon& lex, const PairRecord& r) {
    nlohmann::ordered_json j;
    j["pair_id"] = r.pair_id;
    j["scene_id"] = r.scene_id;
    j["prompt"]["template_id"] = r.prompt.template_id;
    j["prompt"]["scene_features"] = r.prompt.scene_features;
    std::string pos_text = world::render(lex, r.y_pos);
    if (r.style_marker) pos_text += " " + std::string(lex.surface(lex.marker_token()));
    j["y_pos"]["text"] = pos_text;
    j["y_pos"]["tokens"] = r.pos_tokens(lex);
    j["y_neg"]["text"] = world::render(lex, r.y_neg);
    j["y_neg"]["tokens"] = r.neg_tokens();
    j["stage"]["pos"] = r.stage_pos;
    j["stage"]["neg"] = r.stage_neg;
    j["judge"] = r.judge;
    j["style_marker"] = r.style_marker;
    return j;
}

PairRecord record_from_json(const world::Lexicon& lex, const nlohmann::json& j) {
    PairRecord r;
    r.pair_id = j.at("pair_id").get<std::int64_t>();
    r.scene_id = j.at("scene_id").get<std::int64_t>();
    r.prompt.template_id = j.at("prompt").at("template_id").get<int>();
    r.prompt.scene_features = j.at("prompt").at("scene_features").get<std::vector<int>>();
    r.style_marker = j.at("style_marker").get<bool>();
    auto pos = j.at("y_pos").at("tokens").get<std::vector<Token>>();
    const auto neg = j.at("y_neg").at("tokens").get<std::vector<Token>>();
    for (const std::vector<Token>* seq : {static_cast<const std::vector<Token>*>(&pos), &neg})
        for (Token t : *seq)
            if (!lex.valid(t)) throw InputError("record " + std::to_string(r.pair_id) + " has an unknown token");
    if (r.style_marker) {
        if (pos.empty() || pos.back() != lex.marker_token())
            throw InputError("record " + std::to_string(r.pair_id) + " is flagged style_marker without a marker");
        pos.pop_back();
    }
    r.y_pos = world::segment(lex, pos);
    r.y_neg = world::segment(lex, neg);
    r.stage_pos = j.at("stage").at("pos").get<std::string>();
    r.stage_neg = j.at("stage").at("neg").get<std::string>();
    r.judge = j.at("judge").get<std::string>();
    return r;
}

std::string write_jsonl(const world::Lexicon& lex, std::span<const PairRecord> records) {
    std::string out;
    for (const auto& r : records) {
        out += record_to_json(lex, r).dump();
        out += '\n';
    }
    return out;
}

std::vector<PairRecord> read_jsonl(const world::Lexicon& lex, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open dataset '" + path + "'");
    std::vector<PairRecord> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(record_from_json(lex, nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw InputError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::vector<dpo::PreferencePair> to_pairs(const world::Lexicon& lex, std::span<const PairRecord> records) {
    std::vector<dpo::PreferencePair> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.to_pair(lex));
    return out;
}

namespace {

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
// failure (lowest index) after all workers finish.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto count = static_cast<std::size_t>(std::max(1, workers));
    if (count == 1 || n < 2) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(count, n); ++w) pool.emplace_back(work);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

BuildResult build_dataset(const PipelineConfig& cfg, const policy::PolicyParams& params, const world::Lexicon& lex,
                          Judge* judge_override) {
    cfg.validate();
    if (params.layout != policy::FeatureLayout::for_lexicon(lex))
        throw ConfigError("policy layout does not match the world vocabulary");

    std::unique_ptr<Judge> owned;
    Judge* judge = judge_override;
    if (!judge) {
        if (cfg.judge == "oracle")
            owned = std::make_unique<OracleJudge>(lex);
        else
            owned = std::make_unique<RemoteJudge>(cfg.remote, lex);
        judge = owned.get();
    }

    BuildResult result;
    auto& m = result.manifest;
    m["kind"] = "dataset";
    m["valid"] = false;
    m["seed"] = cfg.seed;
    m["config"] = nlohmann::ordered_json::parse(nlohmann::json(cfg).dump());
    m["judge"] = judge->name();
    m["scene_range"] = {cfg.scene_offset, cfg.scene_offset + cfg.scenes};
    m["style_confound"] = cfg.style_confound;
    m["counts"] = {{"scenes", 0}, {"descriptions", 0}, {"base_pairs", 0}, {"clean_scenes", 0}, {"pairs", 0}};

    namespace fs = std::filesystem;
    const bool persist = !cfg.output_dir.empty();
    if (persist) fs::create_directories(cfg.output_dir);
    auto write_manifest = [&] {
        if (persist) io::write_file((fs::path(cfg.output_dir) / "manifest.json").string(), m.dump(2) + "\n");
    };

    const auto scenes = make_scenes(cfg.world, cfg.seed, cfg.scene_offset, cfg.scenes);
    m["counts"]["scenes"] = scenes.size();

    std::string failed_stage;
    try {
        failed_stage = "describe";
        const auto described = generate_descriptions(params, lex, scenes, cfg.decode, cfg.seed);
        m["counts"]["descriptions"] = described.size();

        failed_stage = "detect_correct";
        std::vector<std::optional<CorrectedPair>> corrected(described.size());
        parallel_for(described.size(), judge->max_concurrency(), [&](std::size_t i) {
            const auto& d = described[i];
            try {
                corrected[i] = detect_and_correct(*judge, d.scene, d.response,
                                                  derive_seed(cfg.seed, "correct", static_cast<std::uint64_t>(d.scene.id)));
            } catch (const Error& e) {
                throw StageError(d.scene.id, "detect_correct", e.what());
            }
        });

        failed_stage = "augment";
        const Rewriter rewriter = oracle_rewriter(lex);
        std::int64_t base = 0, clean = 0;
        for (std::size_t i = 0; i < described.size(); ++i) {
            if (!corrected[i]) {
                ++clean;
                continue;
            }
            ++base;
            const auto& d = described[i];
            auto emit = [&](const CorrectedPair& p, std::string stage_pos, std::string stage_neg) {
                PairRecord r;
                r.pair_id = static_cast<std::int64_t>(result.records.size());
                r.scene_id = d.scene.id;
                r.prompt = d.prompt;
                r.y_pos = p.y_pos;
                r.y_neg = p.y_neg;
                r.style_marker = cfg.style_confound;
                r.stage_pos = std::move(stage_pos);
                r.stage_neg = std::move(stage_neg);
                r.judge = judge->name();
                result.records.push_back(std::move(r));
            };
            if (cfg.rewrites == 0) {
                emit(*corrected[i], "corrected", "raw");
                continue;
            }
            const auto aug = augment(rewriter, *corrected[i], cfg.rewrites,
                                     derive_seed(cfg.seed, "augment", static_cast<std::uint64_t>(d.scene.id)));
            for (std::size_t k = 0; k < aug.size(); ++k) {
                const std::string stage = "rewrite#" + std::to_string(k + 1);
                emit(aug[k], stage, stage);
            }
        }
        m["counts"]["base_pairs"] = base;
        m["counts"]["clean_scenes"] = clean;
        m["counts"]["pairs"] = result.records.size();
    } catch (const Error& e) {
        m["error"] = {{"stage", failed_stage}, {"message", e.what()}};
        write_manifest();
        throw;
    }

    if (persist) {
        const std::string jsonl = write_jsonl(lex, result.records);
        const auto path = (fs::path(cfg.output_dir) / "dataset.jsonl").string();
        io::write_file(path, jsonl);
        m["dataset"] = {{"path", "dataset.jsonl"}, {"sha256", io::sha256_hex(jsonl)}};
    }
    m["valid"] = true;
    write_manifest();
    return result;
}

}  // namespace hadpo::datagen
