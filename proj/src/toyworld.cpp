#include "hadpo/toyworld.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "hadpo/errors.hpp"
#include "hadpo/rng.hpp"

namespace hadpo::world {

namespace {

const std::vector<std::vector<std::string>> kCategoryWords = {
    {"person", "individual"}, {"man", "gentleman"},   {"woman", "lady"},       {"child", "kid"},
    {"dog", "hound"},         {"cat", "kitty"},       {"horse", "pony"},       {"bird", "fowl"},
    {"car", "automobile"},    {"bus", "coach"},       {"bicycle", "bike"},     {"boat", "vessel"},
    {"table", "desk"},        {"chair", "seat"},      {"sofa", "couch"},       {"bed", "cot"},
    {"lamp", "lantern"},      {"window", "pane"},     {"door", "doorway"},     {"building", "structure"},
    {"tree", "timber"},       {"grass", "lawn"},      {"sky", "heavens"},      {"cloud", "vapor"},
    {"road", "street"},       {"sign", "placard"},    {"bag", "sack"},         {"cup", "mug"},
    {"plate", "dish"},        {"bottle", "flask"},    {"phone", "handset"},    {"clock", "timepiece"},
};

const std::vector<std::vector<std::string>> kAttributeWords = {
    {"red", "crimson"},   {"blue", "azure"},     {"green", "emerald"},  {"white", "ivory"},
    {"black", "ebony"},   {"yellow", "golden"},  {"large", "big"},      {"small", "little"},
    {"wooden", "timbered"}, {"metal", "metallic"}, {"old", "aged"},     {"new", "fresh"},
    {"wet", "damp"},      {"bright", "luminous"}, {"dark", "dim"},      {"tall", "lofty"},
};

const std::vector<std::vector<std::string>> kPredicateWords = {
    {"on", "atop"},   {"near", "beside"},      {"under", "beneath"}, {"in", "inside"},
    {"holding", "gripping"}, {"above", "over"}, {"wearing", "donning"}, {"behind", "beyond"},
};

constexpr std::array<std::string_view, 3> kKindWords = {"object", "attr", "rel"};
constexpr std::string_view kMarkerWord = "indeed";

// Surface table for `n` symbols with `syn` forms each, falling back to
// generated words where the table runs out.
std::vector<std::vector<std::string>> surface_table(const std::vector<std::vector<std::string>>& given,
                                                    const std::vector<std::vector<std::string>>& builtin,
                                                    std::string_view stem, int n, int syn) {
    const auto& base = given.empty() ? builtin : given;
    std::vector<std::vector<std::string>> out(n);
    for (int i = 0; i < n; ++i) {
        for (int s = 0; s < syn; ++s) {
            if (i < static_cast<int>(base.size()) && s < static_cast<int>(base[i].size())) {
                out[i].push_back(base[i][s]);
            } else if (i < static_cast<int>(base.size()) && !base[i].empty()) {
                out[i].push_back(base[i][0] + "~" + std::to_string(s));
            } else {
                out[i].push_back(std::string(stem) + std::to_string(i) + (s ? "~" + std::to_string(s) : ""));
            }
        }
    }
    return out;
}

}  // namespace

std::string_view to_string(FactKind kind) { return kKindWords[static_cast<int>(kind)]; }

FactKind fact_kind_from_string(std::string_view name) {
    for (int k = 0; k < 3; ++k) {
        if (kKindWords[k] == name) return static_cast<FactKind>(k);
    }
    if (name == "attribute") return FactKind::attribute;
    if (name == "relation") return FactKind::relation;
    throw InputError("unknown fact kind '" + std::string(name) + "'");
}

bool Scene::contains(const Fact& f) const { return std::binary_search(facts.begin(), facts.end(), f); }

std::vector<int> Scene::categories() const {
    std::vector<int> out;
    for (const auto& f : facts) {
        if (f.kind == FactKind::object) out.push_back(f.args[0]);
    }
    return out;
}

void WorldConfig::validate() const {
    if (n_categories < 1 || n_attributes < 1 || n_predicates < 1)
        throw ConfigError("vocabulary sizes must be positive");
    if (n_synonyms < 1) throw ConfigError("n_synonyms must be >= 1");
    if (n_templates < 1) throw ConfigError("n_templates must be >= 1");
    if (objects < 1) throw ConfigError("objects per scene must be >= 1");
    if (attributes < 0 || relations < 0) throw ConfigError("fact counts must be non-negative");
    if (objects > n_categories)
        throw ConfigError("objects per scene (" + std::to_string(objects) + ") exceeds category vocabulary (" +
                          std::to_string(n_categories) + ")");
    if (attributes > static_cast<long>(objects) * n_attributes)
        throw ConfigError("attributes per scene exceed objects x attribute vocabulary");
    if (relations > static_cast<long>(objects) * (objects - 1) * n_predicates)
        throw ConfigError("relations per scene exceed ordered object pairs x predicate vocabulary");
    if (!(category_skew >= 0.0) || !std::isfinite(category_skew)) throw ConfigError("category_skew must be >= 0");
}

void to_json(nlohmann::json& j, const WorldConfig& c) {
    j = nlohmann::json{{"n_categories", c.n_categories},
                       {"n_attributes", c.n_attributes},
                       {"n_predicates", c.n_predicates},
                       {"n_synonyms", c.n_synonyms},
                       {"n_templates", c.n_templates},
                       {"objects", c.objects},
                       {"attributes", c.attributes},
                       {"relations", c.relations},
                       {"category_skew", c.category_skew}};
    if (!c.category_words.empty()) j["category_words"] = c.category_words;
    if (!c.attribute_words.empty()) j["attribute_words"] = c.attribute_words;
    if (!c.predicate_words.empty()) j["predicate_words"] = c.predicate_words;
}

void from_json(const nlohmann::json& j, WorldConfig& c) {
    c = WorldConfig{};
    c.n_categories = j.value("n_categories", c.n_categories);
    c.n_attributes = j.value("n_attributes", c.n_attributes);
    c.n_predicates = j.value("n_predicates", c.n_predicates);
    c.n_synonyms = j.value("n_synonyms", c.n_synonyms);
    c.n_templates = j.value("n_templates", c.n_templates);
    c.objects = j.value("objects", c.objects);
    c.attributes = j.value("attributes", c.attributes);
    c.relations = j.value("relations", c.relations);
    c.category_skew = j.value("category_skew", c.category_skew);
    if (j.contains("category_words")) j.at("category_words").get_to(c.category_words);
    if (j.contains("attribute_words")) j.at("attribute_words").get_to(c.attribute_words);
    if (j.contains("predicate_words")) j.at("predicate_words").get_to(c.predicate_words);
}

WorldConfig load_world_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open world config '" + path + "'");
    WorldConfig cfg = nlohmann::json::parse(in).get<WorldConfig>();
    cfg.validate();
    return cfg;
}

std::size_t Response::token_count() const {
    std::size_t n = 0;
    for (const auto& s : statements) n += s.tokens.size();
    return n;
}

std::vector<Token> Response::flatten() const {
    std::vector<Token> out;
    out.reserve(token_count());
    for (const auto& s : statements) out.insert(out.end(), s.tokens.begin(), s.tokens.end());
    return out;
}

std::size_t JudgeVerdict::hallucinated_count() const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label::hallucinated));
}

Lexicon::Lexicon(WorldConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int syn = cfg_.n_synonyms;
    for (auto w : kKindWords) words_.emplace_back(w);
    cat_base_ = static_cast<Token>(words_.size());
    for (auto& forms : surface_table(cfg_.category_words, kCategoryWords, "category", cfg_.n_categories, syn))
        for (auto& w : forms) words_.push_back(std::move(w));
    attr_base_ = static_cast<Token>(words_.size());
    for (auto& forms : surface_table(cfg_.attribute_words, kAttributeWords, "attribute", cfg_.n_attributes, syn))
        for (auto& w : forms) words_.push_back(std::move(w));
    pred_base_ = static_cast<Token>(words_.size());
    for (auto& forms : surface_table(cfg_.predicate_words, kPredicateWords, "predicate", cfg_.n_predicates, syn))
        for (auto& w : forms) words_.push_back(std::move(w));
    words_.emplace_back(kMarkerWord);

    for (Token t = 0; t < vocab_size(); ++t) {
        if (!index_.emplace(words_[t], t).second)
            throw ConfigError("duplicate surface form '" + words_[t] + "' in lexicon");
    }
}

Token Lexicon::category_token(int category, int synonym) const { return cat_base_ + category * cfg_.n_synonyms + synonym; }
Token Lexicon::attribute_token(int attr, int synonym) const { return attr_base_ + attr * cfg_.n_synonyms + synonym; }
Token Lexicon::predicate_token(int predicate, int synonym) const {
    return pred_base_ + predicate * cfg_.n_synonyms + synonym;
}

TokenInfo Lexicon::info(Token t) const {
    if (!valid(t)) throw InputError("token " + std::to_string(t) + " outside vocabulary");
    const int syn = cfg_.n_synonyms;
    if (t < cat_base_) return {TokenClass::kind, t, 0};
    if (t < attr_base_) return {TokenClass::category, (t - cat_base_) / syn, (t - cat_base_) % syn};
    if (t < pred_base_) return {TokenClass::attribute, (t - attr_base_) / syn, (t - attr_base_) % syn};
    if (t < marker_token()) return {TokenClass::predicate, (t - pred_base_) / syn, (t - pred_base_) % syn};
    return {TokenClass::marker, 0, 0};
}

std::string_view Lexicon::surface(Token t) const {
    if (!valid(t)) throw InputError("token " + std::to_string(t) + " outside vocabulary");
    return words_[t];
}

std::optional<Token> Lexicon::lookup(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::size_t Lexicon::scene_feature_count() const {
    const std::size_t c = cfg_.n_categories;
    return c + c * cfg_.n_attributes + c * cfg_.n_predicates * c;
}

std::size_t Lexicon::feature_index(const Fact& f) const {
    check_fact(f);
    const std::size_t c = cfg_.n_categories;
    switch (f.kind) {
        case FactKind::object:
            return f.args[0];
        case FactKind::attribute:
            return c + static_cast<std::size_t>(f.args[0]) * cfg_.n_attributes + f.args[1];
        case FactKind::relation:
            return c + c * cfg_.n_attributes +
                   (static_cast<std::size_t>(f.args[0]) * cfg_.n_predicates + f.args[1]) * c + f.args[2];
    }
    return 0;
}

std::vector<int> Lexicon::scene_features(const Scene& scene) const {
    std::vector<int> out;
    out.reserve(scene.facts.size());
    for (const auto& f : scene.facts) out.push_back(static_cast<int>(feature_index(f)));
    std::sort(out.begin(), out.end());
    return out;
}

SlotGrammar Lexicon::grammar() const {
    const int syn = cfg_.n_synonyms;
    std::vector<Token> cats, attrs, preds;
    for (int i = 0; i < cfg_.n_categories * syn; ++i) cats.push_back(cat_base_ + i);
    for (int i = 0; i < cfg_.n_attributes * syn; ++i) attrs.push_back(attr_base_ + i);
    for (int i = 0; i < cfg_.n_predicates * syn; ++i) preds.push_back(pred_base_ + i);
    SlotGrammar g;
    g.kinds.push_back({kind_token(FactKind::object), {cats}});
    g.kinds.push_back({kind_token(FactKind::attribute), {cats, attrs}});
    g.kinds.push_back({kind_token(FactKind::relation), {cats, preds, cats}});
    g.free_tokens.push_back(marker_token());
    return g;
}

void Lexicon::check_fact(const Fact& f) const {
    auto in = [](int v, int n) { return v >= 0 && v < n; };
    bool ok = false;
    switch (f.kind) {
        case FactKind::object:
            ok = in(f.args[0], cfg_.n_categories) && f.args[1] == -1 && f.args[2] == -1;
            break;
        case FactKind::attribute:
            ok = in(f.args[0], cfg_.n_categories) && in(f.args[1], cfg_.n_attributes) && f.args[2] == -1;
            break;
        case FactKind::relation:
            ok = in(f.args[0], cfg_.n_categories) && in(f.args[1], cfg_.n_predicates) &&
                 in(f.args[2], cfg_.n_categories);
            break;
    }
    if (!ok) throw InputError("fact symbol ids invalid for its kind");
}

Scene gen_scene(std::uint64_t seed, const WorldConfig& cfg, std::int64_t id) {
    cfg.validate();
    Rng rng(seed);

    // categories: sequential weighted draws without replacement
    std::vector<double> weight(cfg.n_categories);
    for (int c = 0; c < cfg.n_categories; ++c) weight[c] = 1.0 / std::pow(c + 1.0, cfg.category_skew);
    std::vector<int> objects;
    for (int k = 0; k < cfg.objects; ++k) {
        const double total = std::accumulate(weight.begin(), weight.end(), 0.0);
        double u = rng.uniform01() * total;
        int pick = cfg.n_categories - 1;
        for (int c = 0; c < cfg.n_categories; ++c) {
            if (weight[c] <= 0.0) continue;
            if (u < weight[c]) {
                pick = c;
                break;
            }
            u -= weight[c];
        }
        while (weight[pick] <= 0.0) --pick;  // guards the rounding fall-through
        objects.push_back(pick);
        weight[pick] = 0.0;
    }
    std::sort(objects.begin(), objects.end());

    Scene scene;
    scene.id = id;
    for (int c : objects) scene.facts.push_back(Fact::object(c));

    std::vector<Fact> attr_pool;
    for (int c : objects)
        for (int a = 0; a < cfg.n_attributes; ++a) attr_pool.push_back(Fact::attribute(c, a));
    rng.shuffle(std::span(attr_pool));
    scene.facts.insert(scene.facts.end(), attr_pool.begin(), attr_pool.begin() + cfg.attributes);

    std::vector<Fact> rel_pool;
    for (int s : objects)
        for (int p = 0; p < cfg.n_predicates; ++p)
            for (int o : objects)
                if (s != o) rel_pool.push_back(Fact::relation(s, p, o));
    rng.shuffle(std::span(rel_pool));
    scene.facts.insert(scene.facts.end(), rel_pool.begin(), rel_pool.begin() + cfg.relations);

    std::sort(scene.facts.begin(), scene.facts.end());
    return scene;
}

Statement realize_with(const Lexicon& lex, const Fact& f, int synonym) {
    lex.check_fact(f);
    const int s = synonym % lex.config().n_synonyms;
    Statement out;
    out.tokens.push_back(lex.kind_token(f.kind));
    switch (f.kind) {
        case FactKind::object:
            out.tokens.push_back(lex.category_token(f.args[0], s));
            break;
        case FactKind::attribute:
            out.tokens.push_back(lex.category_token(f.args[0], s));
            out.tokens.push_back(lex.attribute_token(f.args[1], s));
            break;
        case FactKind::relation:
            out.tokens.push_back(lex.category_token(f.args[0], s));
            out.tokens.push_back(lex.predicate_token(f.args[1], s));
            out.tokens.push_back(lex.category_token(f.args[2], s));
            break;
    }
    return out;
}

Statement realize(const Lexicon& lex, const Fact& f, std::uint64_t synonym_seed) {
    Statement out = realize_with(lex, f, 0);
    Rng rng(synonym_seed);
    const int n = lex.config().n_synonyms;
    for (std::size_t i = 1; i < out.tokens.size(); ++i) {
        out.tokens[i] += static_cast<int>(rng.uniform_index(n));
    }
    return out;
}

std::optional<Fact> parse(const Lexicon& lex, const Statement& s) {
    if (s.tokens.empty()) return std::nullopt;
    for (Token t : s.tokens)
        if (!lex.valid(t)) return std::nullopt;
    const TokenInfo head = lex.info(s.tokens[0]);
    if (head.cls != TokenClass::kind) return std::nullopt;
    const auto kind = static_cast<FactKind>(head.symbol);
    static constexpr TokenClass kSlots[3][3] = {
        {TokenClass::category},
        {TokenClass::category, TokenClass::attribute},
        {TokenClass::category, TokenClass::predicate, TokenClass::category},
    };
    Fact f{kind, {-1, -1, -1}};
    if (static_cast<int>(s.tokens.size()) != f.arity() + 1) return std::nullopt;
    for (int i = 0; i < f.arity(); ++i) {
        const TokenInfo ti = lex.info(s.tokens[i + 1]);
        if (ti.cls != kSlots[head.symbol][i]) return std::nullopt;
        f.args[i] = ti.symbol;
    }
    return f;
}

Response segment(const Lexicon& lex, std::span<const Token> tokens) {
    Response r;
    std::size_t i = 0;
    while (i < tokens.size()) {
        std::size_t len = 1;
        if (lex.valid(tokens[i]) && lex.info(tokens[i]).cls == TokenClass::kind) {
            len = std::min<std::size_t>(tokens.size() - i, static_cast<std::size_t>(lex.info(tokens[i]).symbol) + 2);
        }
        r.statements.push_back({{tokens.begin() + i, tokens.begin() + i + len}});
        i += len;
    }
    return r;
}

std::string render(const Lexicon& lex, const Response& r) {
    std::string out;
    for (const auto& s : r.statements) {
        if (!out.empty()) out += ' ';
        for (std::size_t i = 0; i < s.tokens.size(); ++i) {
            if (i) out += ' ';
            out += lex.surface(s.tokens[i]);
        }
        out += '.';
    }
    return out;
}

Response read_text(const Lexicon& lex, std::string_view text) {
    Response r;
    std::size_t start = 0;
    while (start < text.size()) {
        std::size_t stop = text.find('.', start);
        if (stop == std::string_view::npos) stop = text.size();
        std::istringstream words{std::string(text.substr(start, stop - start))};
        Statement s;
        for (std::string w; words >> w;) {
            auto t = lex.lookup(w);
            if (!t) throw InputError("unknown word '" + w + "'");
            s.tokens.push_back(*t);
        }
        if (!s.tokens.empty()) r.statements.push_back(std::move(s));
        start = stop + 1;
    }
    return r;
}

JudgeVerdict oracle_judge(const Lexicon& lex, const Response& r, const Scene& scene) {
    JudgeVerdict v;
    v.labels.reserve(r.statements.size());
    for (const auto& s : r.statements) {
        auto f = parse(lex, s);
        v.labels.push_back(f && scene.contains(*f) ? Label::correct : Label::hallucinated);
    }
    return v;
}

Response oracle_correct(const Lexicon& lex, const Response& r, const Scene& scene, std::uint64_t seed) {
    const JudgeVerdict v = oracle_judge(lex, r, scene);
    const std::size_t bad = v.hallucinated_count();
    if (bad == 0) return r;

    std::set<Fact> stated;
    for (std::size_t i = 0; i < r.statements.size(); ++i)
        if (v.labels[i] == Label::correct) stated.insert(*parse(lex, r.statements[i]));
    std::vector<Fact> pool;
    for (const auto& f : scene.facts)
        if (!stated.contains(f)) pool.push_back(f);
    if (pool.size() < bad)
        throw CorrectionInfeasible("scene " + std::to_string(scene.id) + " offers " + std::to_string(pool.size()) +
                                   " unstated facts for " + std::to_string(bad) + " hallucinated statements");

    Rng rng(seed);
    Response out = r;
    for (std::size_t i = 0; i < out.statements.size(); ++i) {
        if (v.labels[i] == Label::correct) continue;
        const std::size_t k = rng.uniform_index(pool.size());
        out.statements[i] = realize(lex, pool[k], rng.next_u64());
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

Response rewrite(const Lexicon& lex, const Response& r, std::uint64_t seed) {
    Rng rng(seed);
    Response out = r;
    rng.shuffle(std::span(out.statements));
    const int n = lex.config().n_synonyms;
    for (auto& s : out.statements) {
        if (!parse(lex, s)) continue;  // malformed statements keep their surface
        for (std::size_t i = 1; i < s.tokens.size(); ++i) {
            const TokenInfo ti = lex.info(s.tokens[i]);
            const int syn = static_cast<int>(rng.uniform_index(n));
            s.tokens[i] += syn - ti.synonym;
        }
    }
    return out;
}

void to_json(nlohmann::json& j, const Fact& f) {
    std::vector<int> args(f.args.begin(), f.args.begin() + f.arity());
    j = nlohmann::json{{"kind", to_string(f.kind)}, {"args", args}};
}

void from_json(const nlohmann::json& j, Fact& f) {
    f.kind = fact_kind_from_string(j.at("kind").get<std::string>());
    const auto args = j.at("args").get<std::vector<int>>();
    if (static_cast<int>(args.size()) != f.arity()) throw InputError("fact arity does not match its kind");
    f.args = {-1, -1, -1};
    std::copy(args.begin(), args.end(), f.args.begin());
}

void to_json(nlohmann::json& j, const Scene& s) { j = nlohmann::json{{"id", s.id}, {"facts", s.facts}}; }

void from_json(const nlohmann::json& j, Scene& s) {
    s.id = j.at("id").get<std::int64_t>();
    s.facts = j.at("facts").get<std::vector<Fact>>();
    std::sort(s.facts.begin(), s.facts.end());
    if (std::adjacent_find(s.facts.begin(), s.facts.end()) != s.facts.end())
        throw InputError("scene " + std::to_string(s.id) + " has duplicate facts");
    const auto cats = s.categories();
    for (const auto& f : s.facts) {
        if (f.kind == FactKind::object) continue;
        auto present = [&](int c) { return std::find(cats.begin(), cats.end(), c) != cats.end(); };
        if (!present(f.args[0]) || (f.kind == FactKind::relation && !present(f.args[2])))
            throw InputError("scene " + std::to_string(s.id) + " references an object it does not contain");
    }
}

}  // namespace hadpo::world
