#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "hadpo/grammar.hpp"

namespace hadpo::world {

enum class FactKind : std::uint8_t { object = 0, attribute = 1, relation = 2 };

std::string_view to_string(FactKind kind);
FactKind fact_kind_from_string(std::string_view name);

/// One ground-truth assertion about a scene.
///
/// object(c), attribute(c, a) and relation(c, p, c2). Unused argument slots
/// hold -1 so that ordering and equality are plain member-wise comparisons.
struct Fact {
    FactKind kind = FactKind::object;
    std::array<int, 3> args{-1, -1, -1};

    static Fact object(int category) { return {FactKind::object, {category, -1, -1}}; }
    static Fact attribute(int category, int attr) { return {FactKind::attribute, {category, attr, -1}}; }
    static Fact relation(int subject, int predicate, int object) {
        return {FactKind::relation, {subject, predicate, object}};
    }

    int arity() const { return static_cast<int>(kind) + 1; }

    auto operator<=>(const Fact&) const = default;
};

struct Scene {
    std::int64_t id = 0;
    std::vector<Fact> facts;  // sorted, duplicate-free

    bool contains(const Fact& f) const;
    std::vector<int> categories() const;
};

struct WorldConfig {
    int n_categories = 32;
    int n_attributes = 16;
    int n_predicates = 8;
    int n_synonyms = 2;
    int n_templates = 4;

    // per-scene fact counts
    int objects = 5;
    int attributes = 3;
    int relations = 2;

    // category prior weight is 1 / (rank + 1)^skew; 0 gives uniform
    double category_skew = 0.5;

    // Optional surface tables: words[symbol][synonym]. Empty means built-in.
    std::vector<std::vector<std::string>> category_words;
    std::vector<std::vector<std::string>> attribute_words;
    std::vector<std::vector<std::string>> predicate_words;

    void validate() const;
};

void to_json(nlohmann::json& j, const WorldConfig& cfg);
void from_json(const nlohmann::json& j, WorldConfig& cfg);
WorldConfig load_world_config(const std::string& path);

struct Statement {
    std::vector<Token> tokens;
    bool operator==(const Statement&) const = default;
};

struct Response {
    std::vector<Statement> statements;

    std::size_t token_count() const;
    std::vector<Token> flatten() const;
    bool operator==(const Response&) const = default;
};

enum class Label : std::uint8_t { correct, hallucinated };

struct JudgeVerdict {
    std::vector<Label> labels;
    std::optional<Response> corrected;

    std::size_t hallucinated_count() const;
};

enum class TokenClass : std::uint8_t { kind, category, attribute, predicate, marker };

struct TokenInfo {
    TokenClass cls;
    int symbol;   // kind index, category id, ...
    int synonym;  // surface-form index; 0 for kind heads and the marker
};

/// Token layout and surface forms for the statement language.
///
/// Ids are laid out as [kind heads][categories][attributes][predicates][marker],
/// with each symbol's synonyms adjacent. The marker is a style token that never
/// realizes a fact; it exists for the style-confound study.
class Lexicon {
public:
    explicit Lexicon(WorldConfig cfg);

    const WorldConfig& config() const { return cfg_; }
    int vocab_size() const { return static_cast<int>(words_.size()); }

    Token kind_token(FactKind k) const { return static_cast<int>(k); }
    Token category_token(int category, int synonym = 0) const;
    Token attribute_token(int attr, int synonym = 0) const;
    Token predicate_token(int predicate, int synonym = 0) const;
    Token marker_token() const { return vocab_size() - 1; }

    TokenInfo info(Token t) const;
    bool valid(Token t) const { return t >= 0 && t < vocab_size(); }
    std::string_view surface(Token t) const;
    std::optional<Token> lookup(std::string_view word) const;

    // Scene indicator layout: objects, then attribute pairs, then relation triples.
    std::size_t scene_feature_count() const;
    std::size_t feature_index(const Fact& f) const;
    std::vector<int> scene_features(const Scene& scene) const;

    SlotGrammar grammar() const;

    void check_fact(const Fact& f) const;

private:
    WorldConfig cfg_;
    std::vector<std::string> words_;
    std::unordered_map<std::string, Token> index_;
    Token cat_base_ = 0, attr_base_ = 0, pred_base_ = 0;
};

Scene gen_scene(std::uint64_t seed, const WorldConfig& cfg, std::int64_t id = 0);

/// Realization with every slot using synonym `synonym` (0 is canonical).
Statement realize_with(const Lexicon& lex, const Fact& f, int synonym = 0);
/// Realization with per-slot synonyms drawn from `synonym_seed`.
Statement realize(const Lexicon& lex, const Fact& f, std::uint64_t synonym_seed);
std::optional<Fact> parse(const Lexicon& lex, const Statement& s);

/// Splits a flat token stream into statements: a kind head takes its arity,
/// any other token at a statement start forms a one-token statement.
Response segment(const Lexicon& lex, std::span<const Token> tokens);

std::string render(const Lexicon& lex, const Response& r);
/// Inverse of render. Throws InputError on words outside the lexicon.
Response read_text(const Lexicon& lex, std::string_view text);

JudgeVerdict oracle_judge(const Lexicon& lex, const Response& r, const Scene& scene);
Response oracle_correct(const Lexicon& lex, const Response& r, const Scene& scene, std::uint64_t seed);
Response rewrite(const Lexicon& lex, const Response& r, std::uint64_t seed);

void to_json(nlohmann::json& j, const Fact& f);
void from_json(const nlohmann::json& j, Fact& f);
void to_json(nlohmann::json& j, const Scene& s);
void from_json(const nlohmann::json& j, Scene& s);

}  // namespace hadpo::world
