#include <doctest.h>

#include <algorithm>

#include "hadpo/errors.hpp"
#include "hadpo/eval.hpp"
#include "hadpo/rng.hpp"

using namespace hadpo;
using namespace hadpo::eval;

namespace {

world::Scene objects_scene(std::int64_t id, std::vector<int> cats) {
    world::Scene s{id, {}};
    std::sort(cats.begin(), cats.end());
    for (int c : cats) s.facts.push_back(world::Fact::object(c));
    return s;
}

std::vector<PopeRecord> answer_all(std::vector<PopeRecord> recs, const auto& answerer) {
    for (auto& r : recs) r.answer = answerer(r);
    return recs;
}

}  // namespace

TEST_CASE("SHR is pooled over images") {
    CHECK(shr_from_rows({{0, 10, 6}}, "x").shr == doctest::Approx(0.6));
    CHECK(shr_from_rows({{0, 4, 0}, {1, 7, 0}}, "x").shr == 0.0);
    CHECK(shr_from_rows({{0, 5, 3}, {1, 5, 1}}, "x").shr == doctest::Approx(0.4));
    const auto r = shr_from_rows({{0, 5, 3}, {1, 10, 0}}, "x");
    CHECK(r.shr == doctest::Approx(0.2));
    CHECK(r.shr != doctest::Approx(0.3));
    CHECK_THROWS_AS(shr_from_rows({{0, 2, 3}}, "x"), InputError);
}

TEST_CASE("SHR equals a brute-force count over 1000 synthetic sets") {
    const world::WorldConfig cfg;
    const world::Lexicon lex{cfg};
    Rng rng(1);
    const JudgeFn judge = [&lex](const world::Scene& s, const world::Response& r) { return world::oracle_judge(lex, r, s); };
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<JudgedResponse> set;
        std::size_t h = 0, s = 0;
        for (std::size_t i = 0, n = 1 + rng.uniform_index(4); i < n; ++i) {
            const auto scene = world::gen_scene(rng.next_u64(), cfg, static_cast<std::int64_t>(i));
            world::Response resp;
            for (std::size_t k = 0, m = rng.uniform_index(5); k < m; ++k) {
                const int c = static_cast<int>(rng.uniform_index(cfg.n_categories));
                resp.statements.push_back(world::realize_with(lex, world::Fact::object(c)));
                h += scene.contains(world::Fact::object(c)) ? 0 : 1;
                ++s;
            }
            set.push_back({scene, resp});
        }
        const auto rep = shr(set, judge, "oracle");
        CHECK(rep.shr == (s ? static_cast<double>(h) / static_cast<double>(s) : 0.0));
    }
}

TEST_CASE("POPE probe lists are balanced and seeded") {
    const world::WorldConfig cfg;
    std::vector<world::Scene> scenes;
    for (int i = 0; i < 4; ++i) scenes.push_back(world::gen_scene(100 + i, cfg, i));
    const auto q = pope_questions(scenes, cfg.n_categories, PopeSplit::random, 10, 3);
    CHECK(q.size() == 10);
    CHECK(std::count_if(q.begin(), q.end(), [](const PopeRecord& r) { return r.truth; }) == 5);
    for (const auto& r : q) {
        const auto& s = scenes.at(static_cast<std::size_t>(r.scene_id));
        CHECK(s.contains(world::Fact::object(r.category)) == r.truth);
    }
    const auto again = pope_questions(scenes, cfg.n_categories, PopeSplit::random, 10, 3);
    for (std::size_t i = 0; i < q.size(); ++i) CHECK(q[i].category == again[i].category);
    CHECK_THROWS_AS(pope_questions(scenes, cfg.n_categories, PopeSplit::random, 9, 3), InputError);
}

TEST_CASE("adversarial negatives follow co-occurrence") {
    // A=0 always appears with B=1 except in the last scene.
    std::vector<world::Scene> scenes{objects_scene(0, {0, 1, 2}), objects_scene(1, {0, 1, 3}),
                                     objects_scene(2, {0, 1, 4}), objects_scene(3, {0, 5})};
    const auto q = pope_questions(scenes, 8, PopeSplit::adversarial, 8, 1);
    const auto neg = std::find_if(q.begin(), q.end(), [](const PopeRecord& r) { return r.scene_id == 3 && !r.truth; });
    REQUIRE(neg != q.end());
    CHECK(neg->category == 1);

    // popular: most frequent absent category first
    const auto p = pope_questions(scenes, 8, PopeSplit::popular, 8, 1);
    const auto pneg = std::find_if(p.begin(), p.end(), [](const PopeRecord& r) { return r.scene_id == 3 && !r.truth; });
    CHECK(pneg->category == 1);
}

TEST_CASE("POPE scoring") {
    SUBCASE("reconstructed published row") {
        const auto m = pope_score_counts(4010, 443, 4557, 990);
        CHECK(std::abs(m.accuracy - 85.67) < 0.02);
        CHECK(std::abs(m.precision - 90.05) < 0.02);
        CHECK(std::abs(m.recall - 80.20) < 0.02);
        CHECK(std::abs(m.f1 - 84.83) < 0.02);
        CHECK(std::abs(m.yes_ratio - 44.53) < 0.02);
    }
    const world::WorldConfig cfg;
    std::vector<world::Scene> scenes;
    for (int i = 0; i < 20; ++i) scenes.push_back(world::gen_scene(7 + i, cfg, i));
    const auto q = pope_questions(scenes, cfg.n_categories, PopeSplit::popular, 200, 5);

    SUBCASE("oracle answers") {
        const auto m = pope_score(answer_all(q, [&](const PopeRecord& r) {
            return scenes[static_cast<std::size_t>(r.scene_id)].contains(world::Fact::object(r.category));
        }));
        CHECK(m.accuracy == 100.0);
        CHECK(m.precision == 100.0);
        CHECK(m.recall == 100.0);
        CHECK(m.f1 == 100.0);
        CHECK(m.yes_ratio == 50.0);
    }
    SUBCASE("always yes") {
        const auto m = pope_score(answer_all(q, [](const PopeRecord&) { return true; }));
        CHECK(m.accuracy == 50.0);
        CHECK(m.recall == 100.0);
        CHECK(m.precision == 50.0);
        CHECK(m.yes_ratio == 100.0);
    }
    SUBCASE("always no flags undefined precision") {
        const auto m = pope_score(answer_all(q, [](const PopeRecord&) { return false; }));
        CHECK(m.precision_undefined);
        CHECK(m.recall == 0.0);
        CHECK(m.f1 == 0.0);
    }
    SUBCASE("seeded stochastic answerer reproduces") {
        auto coin = [](std::uint64_t seed) {
            return [seed](const PopeRecord& r) {
                return Rng(derive_seed(seed, "coin", static_cast<std::uint64_t>(r.scene_id * 64 + r.category)))
                           .uniform01() < 0.5;
            };
        };
        const auto a = pope_score(answer_all(q, coin(3)));
        const auto b = pope_score(answer_all(q, coin(3)));
        CHECK(a.tp == b.tp);
        CHECK(a.fp == b.fp);
        CHECK(a.f1 == b.f1);
    }
    SUBCASE("unanswered records are rejected") {
        CHECK_THROWS_AS(pope_score(q), InputError);
        CHECK_THROWS_AS(pope_score(std::vector<PopeRecord>{}), InputError);
    }
}

TEST_CASE("the policy yes head answers from scene features") {
    const world::WorldConfig cfg;
    const world::Lexicon lex{cfg};
    const auto layout = policy::FeatureLayout::for_lexicon(lex);
    policy::PolicyParams w(layout);
    for (int c = 0; c < cfg.n_categories; ++c)
        w.weights(lex.category_token(c), static_cast<Eigen::Index>(layout.scene_offset() +
                                                                   lex.feature_index(world::Fact::object(c)))) = 4.0;
    const auto scene = world::gen_scene(3, cfg);
    const auto prompt = policy::make_prompt(lex, scene, 0);
    for (int c = 0; c < cfg.n_categories; ++c) {
        const double p = pope_yes_probability(w, lex, prompt, c);
        CHECK((p > 0.5) == scene.contains(world::Fact::object(c)));
    }
}

TEST_CASE("metric JSON rounds to two decimals") {
    const auto j = to_json(pope_score_counts(1, 2, 3, 4));
    CHECK(j["accuracy"].get<double>() == 40.0);
    CHECK(j["precision"].get<double>() == 33.33);
    CHECK(j["confusion"]["fn"].get<int>() == 4);
}
