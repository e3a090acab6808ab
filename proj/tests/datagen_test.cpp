#include <doctest.h>

#include <filesystem>

#include "hadpo/datagen.hpp"
#include "hadpo/errors.hpp"
#include "hadpo/io.hpp"
#include "helpers.hpp"

using namespace hadpo;
using namespace hadpo::datagen;

namespace {

struct Fixture {
    world::WorldConfig wc;
    world::Lexicon lex{wc};
    policy::PolicyParams init = initial_policy(lex, 7);
};

std::size_t hallucinated(const world::Lexicon& lex, const world::Scene& s, const world::Response& r) {
    return world::oracle_judge(lex, r, s).hallucinated_count();
}

// Fails on the n-th call; otherwise behaves like the oracle.
class FlakyJudge final : public Judge {
public:
    FlakyJudge(const world::Lexicon& lex, int fail_at) : oracle_(lex), fail_at_(fail_at) {}
    std::string name() const override { return "flaky"; }
    world::JudgeVerdict judge(const world::Scene& s, const world::Response& r, bool c, std::uint64_t seed) override {
        if (++calls_ == fail_at_) throw TransportError("judge unreachable");
        return oracle_.judge(s, r, c, seed);
    }

private:
    OracleJudge oracle_;
    int fail_at_;
    int calls_ = 0;
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "stage 1 describes every scene") {
    const auto scenes = make_scenes(wc, 7, 0, 10);
    DecodeConfig d;
    const auto out = generate_descriptions(init, lex, scenes, d, 7);
    REQUIRE(out.size() == 10);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].scene.id == scenes[i].id);
        CHECK(out[i].response.statements.size() <= static_cast<std::size_t>(d.max_statements));
    }
    CHECK(generate_descriptions(init, lex, scenes, d, 7)[3].response == out[3].response);

    d.sample = true;
    const auto a = generate_descriptions(init, lex, scenes, d, 1);
    CHECK(generate_descriptions(init, lex, scenes, d, 1)[5].response == a[5].response);
}

TEST_CASE_FIXTURE(Fixture, "a random policy hallucinates") {
    Rng rng(1);
    const auto random = testing::random_params(init.layout, rng, 0.5);
    const auto scenes = make_scenes(wc, 3, 0, 100);
    std::size_t h = 0;
    for (const auto& d : generate_descriptions(random, lex, scenes, DecodeConfig{}, 3)) h += hallucinated(lex, d.scene, d.response);
    CHECK(h > 0);
}

TEST_CASE_FIXTURE(Fixture, "stage 2 builds a pair only for hallucinated descriptions") {
    OracleJudge judge(lex);
    const auto scene = scene_for(wc, 7, 0);
    world::Response clean;
    for (std::size_t i = 0; i < 3; ++i) clean.statements.push_back(world::realize_with(lex, scene.facts[i]));
    CHECK_FALSE(detect_and_correct(judge, scene, clean, 1).has_value());

    world::Response dirty = clean;
    int added = 0;
    for (int c = 0; added < 2; ++c)
        if (!scene.contains(world::Fact::object(c))) {
            dirty.statements.push_back(world::realize_with(lex, world::Fact::object(c)));
            ++added;
        }
    const auto pair = detect_and_correct(judge, scene, dirty, 1);
    REQUIRE(pair.has_value());
    CHECK(pair->y_neg == dirty);
    CHECK(hallucinated(lex, scene, pair->y_pos) == 0);
}

TEST_CASE_FIXTURE(Fixture, "stage 3 multiplies pairs and preserves hallucination counts") {
    OracleJudge judge(lex);
    const Rewriter rw = oracle_rewriter(lex);
    const auto scenes = make_scenes(wc, 7, 0, 200);
    const auto described = generate_descriptions(init, lex, scenes, DecodeConfig{}, 7);
    std::size_t base = 0, total = 0;
    for (const auto& d : described) {
        const auto p = detect_and_correct(judge, d.scene, d.response, 2);
        if (!p) continue;
        ++base;
        CHECK(augment(rw, *p, 0, 1).empty());
        const auto aug = augment(rw, *p, 3, d.scene.id);
        total += aug.size();
        for (const auto& a : aug) {
            CHECK(hallucinated(lex, d.scene, a.y_pos) == 0);
            CHECK(hallucinated(lex, d.scene, a.y_neg) == hallucinated(lex, d.scene, p->y_neg));
        }
    }
    CHECK(base > 0);
    CHECK(total == 3 * base);
}

TEST_CASE_FIXTURE(Fixture, "pipeline over 500 scenes emits only valid pairs") {
    PipelineConfig cfg;
    cfg.scenes = 500;
    cfg.seed = 11;
    const auto res = build_dataset(cfg, init, lex);
    const auto scenes = make_scenes(wc, 11, 0, 500);
    for (const auto& r : res.records) {
        const auto& s = scenes.at(static_cast<std::size_t>(r.scene_id));
        CHECK(hallucinated(lex, s, r.y_pos) == 0);
        CHECK(hallucinated(lex, s, r.y_neg) > 0);
        CHECK(r.y_pos.statements.size() == r.y_neg.statements.size());
        CHECK_NOTHROW(r.to_pair(lex).validate(init.layout));
    }
    const auto& c = res.manifest["counts"];
    CHECK(c["pairs"].get<std::size_t>() == 3 * c["base_pairs"].get<std::size_t>());
    CHECK(c["base_pairs"].get<std::int64_t>() + c["clean_scenes"].get<std::int64_t>() == 500);
}

TEST_CASE_FIXTURE(Fixture, "persisted datasets are byte-identical across reruns") {
    testing::TempDir a("forge-a"), b("forge-b");
    PipelineConfig cfg;
    cfg.scenes = 50;
    cfg.seed = 3;
    cfg.output_dir = a.path.string();
    const auto ra = build_dataset(cfg, init, lex);
    cfg.output_dir = b.path.string();
    build_dataset(cfg, init, lex);
    CHECK(io::read_file(a / "dataset.jsonl") == io::read_file(b / "dataset.jsonl"));
    CHECK(ra.manifest["valid"] == true);
    CHECK(ra.manifest["dataset"]["sha256"] == io::sha256_file(a / "dataset.jsonl"));

    const auto back = read_jsonl(lex, a / "dataset.jsonl");
    REQUIRE(back.size() == ra.records.size());
    CHECK(write_jsonl(lex, back) == io::read_file(a / "dataset.jsonl"));
}

TEST_CASE_FIXTURE(Fixture, "JSONL field order is fixed") {
    PipelineConfig cfg;
    cfg.scenes = 20;
    const auto res = build_dataset(cfg, init, lex);
    REQUIRE(!res.records.empty());
    const auto j = record_to_json(lex, res.records[0]);
    std::vector<std::string> keys;
    for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
    CHECK(keys == std::vector<std::string>{"pair_id", "scene_id", "prompt", "y_pos", "y_neg", "stage", "judge",
                                           "style_marker"});
}

TEST_CASE_FIXTURE(Fixture, "style confound marks every positive and no negative") {
    PipelineConfig cfg;
    cfg.scenes = 60;
    cfg.style_confound = true;
    const auto res = build_dataset(cfg, init, lex);
    CHECK(res.manifest["style_confound"] == true);
    REQUIRE(!res.records.empty());
    for (const auto& p : to_pairs(lex, res.records)) {
        CHECK(p.y_pos.back() == lex.marker_token());
        CHECK(std::find(p.y_neg.begin(), p.y_neg.end(), lex.marker_token()) == p.y_neg.end());
    }
}

TEST_CASE_FIXTURE(Fixture, "k = 0 keeps the corrected and raw pair") {
    PipelineConfig cfg;
    cfg.scenes = 30;
    cfg.rewrites = 0;
    const auto res = build_dataset(cfg, init, lex);
    CHECK(res.records.size() == res.manifest["counts"]["base_pairs"].get<std::size_t>());
    for (const auto& r : res.records) {
        CHECK(r.stage_pos == "corrected");
        CHECK(r.stage_neg == "raw");
    }
}

TEST_CASE_FIXTURE(Fixture, "a failing judge leaves an invalid manifest") {
    testing::TempDir dir("forge-fail");
    PipelineConfig cfg;
    cfg.scenes = 20;
    cfg.output_dir = dir.path.string();
    FlakyJudge judge(lex, 5);
    CHECK_THROWS_AS(build_dataset(cfg, init, lex, &judge), StageError);
    const auto m = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
    CHECK(m["valid"] == false);
    CHECK(m["error"]["stage"] == "detect_correct");
    CHECK_FALSE(std::filesystem::exists(dir / "dataset.jsonl"));
}

TEST_CASE("pipeline config validation and JSON") {
    PipelineConfig c;
    c.rewrites = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = PipelineConfig{};
    c.judge = "gpt";
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = PipelineConfig{};
    c.scenes = 42;
    c.style_confound = true;
    const nlohmann::json j = c;
    const auto back = j.get<PipelineConfig>();
    CHECK(back.scenes == 42);
    CHECK(back.style_confound);
    CHECK(back.decode.max_statements == c.decode.max_statements);
}

TEST_CASE_FIXTURE(Fixture, "the initial policy suppresses the marker") {
    const auto scenes = make_scenes(wc, 7, 0, 50);
    for (const auto& d : generate_descriptions(init, lex, scenes, DecodeConfig{}, 7))
        for (const auto& s : d.response.statements)
            CHECK(std::find(s.tokens.begin(), s.tokens.end(), lex.marker_token()) == s.tokens.end());
}
