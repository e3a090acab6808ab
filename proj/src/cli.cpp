#include "hadpo/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <sstream>

#include "hadpo/errors.hpp"
#include "hadpo/experiment.hpp"
#include "hadpo/io.hpp"
#include "hadpo/rng.hpp"

namespace hadpo::cli {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

struct Leakage : Error {
    using Error::Error;
};

constexpr std::int64_t kDefaultEvalOffset = 1000000;

std::string join_path(const fs::path& dir, const char* name) { return (dir / name).string(); }

ojson load_json_file(const std::string& path) {
    if (!fs::exists(path)) throw InputError("no such file: " + path);
    try {
        return ojson::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(path + ": " + e.what());
    }
}

// The config file is read before flags are applied; a missing or malformed
// config counts as a usage problem.
nlohmann::json load_config(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path);
    try {
        return nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

ojson ordered(const nlohmann::json& j) { return ojson::parse(j.dump()); }

ojson init_to_json(const datagen::InitConfig& c) {
    return {{"stddev", c.stddev}, {"grounding", c.grounding}, {"marker_bias", c.marker_bias}};
}

datagen::InitConfig init_from_json(const nlohmann::json& j) {
    datagen::InitConfig c;
    c.stddev = j.value("stddev", c.stddev);
    c.grounding = j.value("grounding", c.grounding);
    c.marker_bias = j.value("marker_bias", c.marker_bias);
    if (!(c.stddev >= 0.0)) throw ConfigError("init stddev must be >= 0");
    return c;
}

std::string command_line(int argc, const char* const* argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

/// A forged dataset directory: manifest, pairs and the policy that generated them.
struct Dataset {
    fs::path dir;
    ojson manifest;
    std::string manifest_sha;
    datagen::PipelineConfig config;
    std::unique_ptr<world::Lexicon> lex;
    std::vector<datagen::PairRecord> records;
    policy::PolicyParams init;
    std::string init_sha;

    std::vector<dpo::PreferencePair> pairs() const { return datagen::to_pairs(*lex, records); }
    std::int64_t range_begin() const { return manifest.at("scene_range").at(0).get<std::int64_t>(); }
    std::int64_t range_end() const { return manifest.at("scene_range").at(1).get<std::int64_t>(); }
};

Dataset load_dataset(const std::string& dir) {
    Dataset d;
    d.dir = dir;
    const auto manifest_path = join_path(d.dir, "manifest.json");
    d.manifest = load_json_file(manifest_path);
    d.manifest_sha = io::sha256_file(manifest_path);
    if (!d.manifest.value("valid", false)) throw InputError(dir + ": dataset manifest is marked invalid");
    d.config = nlohmann::json::parse(d.manifest.at("config").dump()).get<datagen::PipelineConfig>();
    d.lex = std::make_unique<world::Lexicon>(d.config.world);

    const auto& ds = d.manifest.at("dataset");
    const auto data_path = (d.dir / ds.at("path").get<std::string>()).string();
    if (io::sha256_file(data_path) != ds.at("sha256").get<std::string>())
        throw InputError(data_path + ": hash differs from its manifest");
    d.records = datagen::read_jsonl(*d.lex, data_path);

    const auto& ip = d.manifest.at("init_params");
    const auto init_path = (d.dir / ip.at("path").get<std::string>()).string();
    d.init_sha = io::sha256_file(init_path);
    if (d.init_sha != ip.at("sha256").get<std::string>()) throw InputError(init_path + ": hash differs from its manifest");
    d.init = policy::load_params(init_path);
    if (d.init.layout != policy::FeatureLayout::for_lexicon(*d.lex))
        throw InputError(init_path + ": parameter layout does not match the dataset vocabulary");
    return d;
}

policy::PolicyParams load_params_for(const Dataset& d, const std::string& path) {
    if (!fs::exists(path)) throw InputError("no such file: " + path);
    auto p = policy::load_params(path);
    if (p.layout != d.init.layout) throw InputError(path + ": parameter layout does not match the dataset vocabulary");
    return p;
}

// Sibling manifest of a params file, if the params came out of `train`.
std::optional<std::string> sibling_manifest_sha(const std::string& params_path) {
    const auto m = fs::path(params_path).parent_path() / "manifest.json";
    if (!fs::exists(m)) return std::nullopt;
    return io::sha256_file(m.string());
}

struct EvalScenes {
    std::uint64_t seed = 0;
    std::int64_t offset = kDefaultEvalOffset;
    std::int64_t count = 0;
};

void guard_leakage(const Dataset& d, const EvalScenes& e) {
    if (e.seed != d.config.seed) return;  // different worlds share no scenes
    const std::int64_t lo = std::max(e.offset, d.range_begin());
    const std::int64_t hi = std::min(e.offset + e.count, d.range_end());
    if (lo < hi)
        throw Leakage("evaluation scenes [" + std::to_string(e.offset) + ", " + std::to_string(e.offset + e.count) +
                      ") overlap training scenes [" + std::to_string(d.range_begin()) + ", " +
                      std::to_string(d.range_end()) + ")");
}

ojson base_manifest(const std::string& kind, const std::string& cmd) {
    ojson m;
    m["kind"] = kind;
    m["command"] = cmd;
    m["started"] = io::utc_timestamp();
    return m;
}

void finish_manifest(ojson& m, const fs::path& dir) {
    m["finished"] = io::utc_timestamp();
    io::write_file(join_path(dir, "manifest.json"), m.dump(2) + "\n");
}

ojson artifact(const fs::path& dir, const char* name) {
    return {{"path", name}, {"sha256", io::sha256_file(join_path(dir, name))}};
}

std::string fmt(double x, int prec = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << x;
    return s.str();
}

// ---- forge -----------------------------------------------------------------

struct ForgeArgs {
    std::string config;
    std::int64_t scenes = 0;
    std::int64_t offset = 0;
    int rewrites = 0;
    std::string judge;
    bool style_confound = false;
    std::uint64_t seed = 0;
    int max_statements = 0;
    std::string out;
};

int cmd_forge(const ForgeArgs& a, const CLI::App& app, const std::string& cmd, std::ostream& out) {
    datagen::PipelineConfig cfg;
    datagen::InitConfig init_cfg;
    if (!a.config.empty()) {
        const auto j = load_config(a.config);
        cfg = j.get<datagen::PipelineConfig>();
        if (j.contains("init")) init_cfg = init_from_json(j.at("init"));
    }
    if (app.count("--scenes")) cfg.scenes = a.scenes;
    if (app.count("--offset")) cfg.scene_offset = a.offset;
    if (app.count("--rewrites")) cfg.rewrites = a.rewrites;
    if (app.count("--judge")) cfg.judge = a.judge;
    if (app.count("--style-confound")) cfg.style_confound = a.style_confound;
    if (app.count("--seed")) cfg.seed = a.seed;
    if (app.count("--max-statements")) cfg.decode.max_statements = a.max_statements;
    cfg.output_dir = a.out;
    cfg.validate();

    const world::Lexicon lex(cfg.world);
    const auto init = datagen::initial_policy(lex, cfg.seed, init_cfg);
    fs::create_directories(a.out);
    policy::save_params(init, join_path(a.out, "init.bin"));

    auto result = datagen::build_dataset(cfg, init, lex);

    // Re-issue the manifest with the run metadata around the pipeline's own record.
    ojson m = base_manifest("dataset", cmd);
    for (auto it = result.manifest.begin(); it != result.manifest.end(); ++it)
        if (it.key() != "kind") m[it.key()] = it.value();
    m["init"] = init_to_json(init_cfg);
    m["init_params"] = artifact(a.out, "init.bin");
    finish_manifest(m, a.out);

    const auto& c = m["counts"];
    out << "forged " << c["pairs"].get<std::int64_t>() << " pairs from " << c["scenes"].get<std::int64_t>()
        << " scenes (" << c["clean_scenes"].get<std::int64_t>() << " clean) -> " << join_path(a.out, "dataset.jsonl")
        << "\nsha256 " << m["dataset"]["sha256"].get<std::string>() << '\n';
    return kOk;
}

// ---- train -----------------------------------------------------------------

struct TrainArgs {
    std::string config;
    std::string dataset;
    double beta = 0;
    std::int64_t steps = 0;
    double lr = 0;
    std::int64_t batch = 0;
    std::uint64_t seed = 0;
    std::string out;
};

dpo::TrainConfig train_config(const TrainArgs& a, const CLI::App& app) {
    dpo::TrainConfig cfg;
    if (!a.config.empty()) cfg = load_config(a.config).get<dpo::TrainConfig>();
    if (app.count("--beta")) cfg.beta = a.beta;
    if (app.count("--steps")) cfg.steps = a.steps;
    if (app.count("--lr")) cfg.learning_rate = a.lr;
    if (app.count("--batch")) cfg.batch_size = a.batch;
    if (app.count("--seed")) cfg.seed = a.seed;
    cfg.validate();
    return cfg;
}

int cmd_train(const TrainArgs& a, const CLI::App& app, const std::string& cmd, std::ostream& out) {
    auto cfg = train_config(a, app);
    const Dataset d = load_dataset(a.dataset);
    cfg.style_confound = d.config.style_confound;
    const auto pairs = d.pairs();
    if (pairs.empty()) throw InputError(a.dataset + ": dataset has no pairs");

    fs::create_directories(a.out);
    ojson m = base_manifest("train", cmd);
    m["config"] = ordered(nlohmann::json(cfg));
    m["dataset"] = {{"dir", d.dir.string()},
                    {"manifest_sha256", d.manifest_sha},
                    {"dataset_sha256", d.manifest["dataset"]["sha256"]},
                    {"pairs", pairs.size()}};
    m["reference"] = {{"path", (d.dir / "init.bin").string()}, {"sha256", d.init_sha}};

    dpo::TrainResult res;
    try {
        res = dpo::train(pairs, d.init, cfg);
    } catch (const DivergenceError& e) {
        m["valid"] = false;
        m["error"] = {{"divergence_step", e.step}, {"message", e.what()}};
        finish_manifest(m, a.out);
        throw;
    }

    policy::save_params(res.params, join_path(a.out, "params.bin"));
    {
        std::ostringstream csv;
        write_trace_csv(csv, res.trace);
        io::write_file(join_path(a.out, "trace.csv"), csv.str());
    }
    m["valid"] = true;
    m["artifacts"] = {artifact(a.out, "params.bin"), artifact(a.out, "trace.csv")};
    m["final"] = {{"loss", res.trace.loss.back()},
                  {"margin", res.trace.margin.back()},
                  {"grad_smoothness", res.trace.size() >= 2 ? diag::grad_smoothness(res.trace) : 0.0}};
    finish_manifest(m, a.out);

    out << "trained " << cfg.steps << " steps on " << pairs.size() << " pairs (beta " << cfg.beta
        << "); final loss " << fmt(res.trace.loss.back()) << ", margin " << fmt(res.trace.margin.back()) << " -> "
        << join_path(a.out, "params.bin") << '\n';
    return kOk;
}

// ---- diagnose --------------------------------------------------------------

struct DiagnoseArgs {
    std::string params;
    std::string dataset;
    std::string trace;
    std::string out;
    int n_min = 1;
    int n_max = 4;
    std::int64_t images = 50;
    std::int64_t offset = kDefaultEvalOffset;
    double beta = 0.1;
};

int cmd_diagnose(const DiagnoseArgs& a, const std::string& cmd, std::ostream& out) {
    if (a.n_min < 1 || a.n_max < a.n_min) throw ConfigError("n-gram range must satisfy 1 <= n-min <= n-max");
    if (a.images < 1) throw ConfigError("--images must be >= 1");
    if (!(a.beta > 0.0)) throw ConfigError("--beta must be > 0");
    const Dataset d = load_dataset(a.dataset);
    const auto params = load_params_for(d, a.params);
    const auto pairs = d.pairs();
    if (pairs.empty()) throw InputError(a.dataset + ": dataset has no pairs");

    fs::create_directories(a.out);
    const auto mis = diag::misalignment(params, pairs);
    const auto scenes = datagen::make_scenes(d.config.world, d.config.seed, a.offset, a.images);
    const auto prompts = experiment::prompts_for(*d.lex, scenes, d.config.seed);
    const auto deg = diag::degeneration_report(params, prompts, d.lex->grammar(), d.config.decode.max_statements,
                                               a.n_min, a.n_max);

    // Marker probe: the same pairs with the style marker on the chosen side,
    // then on the rejected side. A policy that learned the marker instead of
    // content changes sign between the two.
    const double marker_pos = experiment::mean_margin(params, d.init, experiment::with_marker(*d.lex, pairs, true), a.beta);
    const double marker_neg =
        experiment::mean_margin(params, d.init, experiment::with_marker(*d.lex, pairs, false), a.beta);

    std::ostringstream text;
    diag::write_misalignment_text(text, mis);
    diag::write_degeneration_text(text, deg);
    text << "marker probe margin (marker on chosen): " << fmt(marker_pos)
         << "\nmarker probe margin (marker on rejected): " << fmt(marker_neg) << '\n';

    ojson report;
    report["misalignment"] = mis.statistic;
    report["fluency"] = ojson::object();
    for (std::size_t c = 0; c < deg.columns(); ++c)
        report["fluency"][std::to_string(deg.n_min + static_cast<int>(c))] = deg.mean[c];
    report["marker_probe"] = {{"marker_on_chosen", marker_pos}, {"marker_on_rejected", marker_neg}};
    if (!a.trace.empty()) {
        std::ifstream in(a.trace);
        if (!in) throw InputError("no such file: " + a.trace);
        const auto trace = read_trace_csv(in);
        const double s = diag::grad_smoothness(trace);
        report["grad_smoothness"] = s;
        text << "grad smoothness: " << fmt(s, 6) << '\n';
    }

    {
        std::ostringstream csv;
        diag::write_misalignment_csv(csv, mis);
        io::write_file(join_path(a.out, "misalignment.csv"), csv.str());
    }
    {
        std::ostringstream csv;
        diag::write_degeneration_csv(csv, deg);
        io::write_file(join_path(a.out, "degeneration.csv"), csv.str());
    }
    io::write_file(join_path(a.out, "report.txt"), text.str());
    io::write_file(join_path(a.out, "diagnose.json"), report.dump(2) + "\n");

    ojson m = base_manifest("diagnose", cmd);
    m["inputs"] = {{"params", a.params},
                   {"params_sha256", io::sha256_file(a.params)},
                   {"dataset_manifest_sha256", d.manifest_sha}};
    m["artifacts"] = {artifact(a.out, "misalignment.csv"), artifact(a.out, "degeneration.csv"),
                      artifact(a.out, "diagnose.json")};
    finish_manifest(m, a.out);
    out << text.str();
    return kOk;
}

// ---- eval ------------------------------------------------------------------

struct EvalArgs {
    std::string params;
    std::string dataset;
    std::string out;
    std::int64_t images = 200;
    std::int64_t offset = kDefaultEvalOffset;
    std::uint64_t seed = 0;
    std::string judge = "oracle";
    std::string judge_config;
    std::string split = "random";
    std::int64_t count = 3000;
};

EvalScenes eval_scenes(const EvalArgs& a, const CLI::App& sub, const Dataset& d) {
    if (a.images < 1) throw ConfigError("--images must be >= 1");
    if (a.offset < 0) throw ConfigError("--offset must be >= 0");
    EvalScenes e;
    e.seed = sub.count("--seed") ? a.seed : d.config.seed;
    e.offset = a.offset;
    e.count = a.images;
    guard_leakage(d, e);
    return e;
}

ojson eval_manifest(const std::string& kind, const std::string& cmd, const EvalArgs& a, const Dataset& d,
                    const EvalScenes& e) {
    ojson m = base_manifest(kind, cmd);
    m["inputs"] = {{"params", a.params},
                   {"params_sha256", io::sha256_file(a.params)},
                   {"train_manifest_sha256", sibling_manifest_sha(a.params).value_or("")},
                   {"dataset_manifest_sha256", d.manifest_sha}};
    m["scenes"] = {{"seed", e.seed}, {"range", {e.offset, e.offset + e.count}}};
    return m;
}

int cmd_eval_shr(const EvalArgs& a, const CLI::App& sub, const std::string& cmd, std::ostream& out) {
    if (a.judge != "oracle" && a.judge != "remote") throw ConfigError("--judge must be oracle or remote");
    if (a.judge == "remote" && a.judge_config.empty()) throw ConfigError("--judge remote needs --judge-config");
    const Dataset d = load_dataset(a.dataset);
    const auto params = load_params_for(d, a.params);
    const auto e = eval_scenes(a, sub, d);
    const auto scenes = datagen::make_scenes(d.config.world, e.seed, e.offset, e.count);

    eval::ShrReport rep;
    if (a.judge == "oracle") {
        rep = experiment::oracle_shr(params, *d.lex, scenes, e.seed, d.config.decode.max_statements);
    } else {
        auto rc = load_config(a.judge_config).get<datagen::RemoteJudgeConfig>();
        rc.validate();
        datagen::RemoteJudge judge(rc, *d.lex, false);
        datagen::DecodeConfig decode;
        decode.max_statements = d.config.decode.max_statements;
        const auto described = datagen::generate_descriptions(params, *d.lex, scenes, decode, e.seed);
        std::vector<eval::JudgedResponse> judged;
        for (const auto& x : described) judged.push_back({x.scene, x.response});
        rep = eval::shr(
            judged, [&judge](const world::Scene& s, const world::Response& r) { return judge.judge(s, r, false, 0); },
            "remote");
    }

    fs::create_directories(a.out);
    io::write_file(join_path(a.out, "shr.json"), eval::to_json(rep).dump(2) + "\n");
    ojson m = eval_manifest("eval-shr", cmd, a, d, e);
    m["judge"] = a.judge;
    m["artifacts"] = {artifact(a.out, "shr.json")};
    finish_manifest(m, a.out);
    eval::write_shr_text(out, rep);
    return kOk;
}

int cmd_eval_pope(const EvalArgs& a, const CLI::App& sub, const std::string& cmd, std::ostream& out) {
    const auto split = eval::pope_split_from_string(a.split);
    if (a.count < 2 || a.count % 2) throw ConfigError("--count must be even and >= 2");
    const Dataset d = load_dataset(a.dataset);
    const auto params = load_params_for(d, a.params);
    const auto e = eval_scenes(a, sub, d);
    const auto scenes = datagen::make_scenes(d.config.world, e.seed, e.offset, e.count);
    const auto prompts = experiment::prompts_for(*d.lex, scenes, e.seed);

    auto records = eval::pope_questions(scenes, d.config.world.n_categories, split, a.count, e.seed);
    for (auto& r : records) {
        const auto idx = static_cast<std::size_t>(r.scene_id - e.offset);
        r = eval::pope_answer(params, *d.lex, prompts[idx], r);
    }
    const auto metrics = eval::pope_score(records);

    ojson report;
    report["metric"] = "pope";
    report["split"] = a.split;
    report["count"] = a.count;
    report["images"] = e.count;
    const ojson mj = eval::to_json(metrics);
    for (auto it = mj.begin(); it != mj.end(); ++it) report[it.key()] = it.value();

    fs::create_directories(a.out);
    io::write_file(join_path(a.out, "pope.json"), report.dump(2) + "\n");
    {
        std::string lines;
        for (const auto& r : records) lines += eval::to_json(r).dump() + "\n";
        io::write_file(join_path(a.out, "pope_answers.jsonl"), lines);
    }
    ojson m = eval_manifest("eval-pope", cmd, a, d, e);
    m["artifacts"] = {artifact(a.out, "pope.json"), artifact(a.out, "pope_answers.jsonl")};
    finish_manifest(m, a.out);
    eval::write_pope_text(out, metrics, a.split);
    return kOk;
}

// ---- sweep-beta ------------------------------------------------------------

struct SweepArgs {
    TrainArgs train;
    std::vector<double> betas{0.1, 0.3, 0.5, 1.0};
    std::int64_t images = 50;
    std::int64_t offset = kDefaultEvalOffset;
};

int cmd_sweep(const SweepArgs& a, const CLI::App& app, const std::string& cmd, std::ostream& out) {
    if (a.betas.empty()) throw ConfigError("--betas needs at least one value");
    for (double b : a.betas)
        if (!(b > 0.0)) throw ConfigError("every beta must be > 0");
    if (a.images < 1) throw ConfigError("--images must be >= 1");
    auto base = train_config(a.train, app);
    const Dataset d = load_dataset(a.train.dataset);
    const auto pairs = d.pairs();
    if (pairs.empty()) throw InputError(a.train.dataset + ": dataset has no pairs");
    EvalScenes e{d.config.seed, a.offset, a.images};
    guard_leakage(d, e);
    base.style_confound = d.config.style_confound;

    // Held-out probe set: pairs forged from the evaluation scenes by the same pipeline.
    auto probe_cfg = d.config;
    probe_cfg.scene_offset = e.offset;
    probe_cfg.scenes = e.count;
    probe_cfg.output_dir.clear();
    probe_cfg.judge = "oracle";
    const auto probe = datagen::to_pairs(*d.lex, datagen::build_dataset(probe_cfg, d.init, *d.lex).records);
    const auto scenes = datagen::make_scenes(d.config.world, e.seed, e.offset, e.count);
    const auto prompts = experiment::prompts_for(*d.lex, scenes, e.seed);
    const int max_st = d.config.decode.max_statements;

    fs::create_directories(a.train.out);
    ojson rows = ojson::array();
    std::ostringstream table;
    table << std::left << std::setw(8) << "beta" << std::right << std::setw(9) << "SHR(%)";
    for (int n = 1; n <= 4; ++n) table << std::setw(9) << (std::to_string(n) + "-gram");
    table << std::setw(11) << "deviation" << '\n';

    auto row_ref = [&](const char* label, const policy::PolicyParams& p, std::optional<double> beta,
                       std::ostream& tab) {
        const auto shr = experiment::oracle_shr(p, *d.lex, scenes, e.seed, max_st);
        const auto deg = diag::degeneration_report(p, prompts, d.lex->grammar(), max_st, 1, 4);
        ojson r;
        if (beta)
            r["beta"] = *beta;
        else
            r["beta"] = nullptr;
        r["status"] = "ok";
        r["shr"] = shr.shr;
        r["fluency"] = deg.mean;
        r["deviation"] = probe.empty() ? 0.0 : experiment::mean_abs_deviation(p, d.init, probe);
        tab << std::left << std::setw(8) << label << std::right << std::fixed << std::setprecision(2) << std::setw(9)
            << 100.0 * shr.shr;
        for (double f : deg.mean) tab << std::setw(9) << 100.0 * f;
        tab << std::setw(11) << r["deviation"].get<double>() << std::defaultfloat << '\n';
        return r;
    };

    std::ostringstream ref_line;
    ref_line << "reference policy:\n";
    const ojson reference = row_ref("ref", d.init, std::nullopt, ref_line);
    for (double beta : a.betas) {
        auto cfg = base;
        cfg.beta = beta;
        std::ostringstream label;
        label << beta;
        try {
            const auto res = dpo::train(pairs, d.init, cfg);
            auto r = row_ref(label.str().c_str(), res.params, beta, table);
            const auto cell = fs::path(a.train.out) / ("beta_" + label.str());
            fs::create_directories(cell);
            policy::save_params(res.params, join_path(cell, "params.bin"));
            r["params_sha256"] = io::sha256_file(join_path(cell, "params.bin"));
            rows.push_back(std::move(r));
        } catch (const DivergenceError& err) {
            rows.push_back({{"beta", beta}, {"status", "diverged"}, {"divergence_step", err.step}});
            table << std::left << std::setw(8) << label.str() << "  diverged at step " << err.step << '\n';
        }
    }

    ojson report;
    report["metric"] = "beta_sweep";
    report["steps"] = base.steps;
    report["learning_rate"] = base.learning_rate;
    report["seed"] = base.seed;
    report["probe_pairs"] = probe.size();
    report["reference"] = reference;
    report["rows"] = rows;
    io::write_file(join_path(a.train.out, "sweep.json"), report.dump(2) + "\n");
    io::write_file(join_path(a.train.out, "sweep.txt"), table.str());

    ojson m = base_manifest("sweep-beta", cmd);
    m["config"] = ordered(nlohmann::json(base));
    m["betas"] = a.betas;
    m["inputs"] = {{"dataset_manifest_sha256", d.manifest_sha}};
    m["scenes"] = {{"seed", e.seed}, {"range", {e.offset, e.offset + e.count}}};
    m["artifacts"] = {artifact(a.train.out, "sweep.json"), artifact(a.train.out, "sweep.txt")};
    finish_manifest(m, a.train.out);
    out << table.str() << ref_line.str();
    return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Hallucination-aware preference optimization on a synthetic scene world"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "hadpo 0.1.0");
    const std::string cmd = command_line(argc, argv);

    ForgeArgs fa;
    auto* forge = app.add_subcommand("forge", "Build a preference dataset (describe, detect/correct, rewrite)");
    forge->add_option("--config", fa.config, "JSON pipeline config; flags override it");
    forge->add_option("--scenes", fa.scenes, "Number of scenes");
    forge->add_option("--offset", fa.offset, "First scene id");
    forge->add_option("--rewrites", fa.rewrites, "Rewrites per pair (k); 0 keeps the corrected pair");
    forge->add_option("--judge", fa.judge, "oracle | remote");
    forge->add_flag("--style-confound", fa.style_confound, "Append the style marker to every chosen response");
    forge->add_option("--seed", fa.seed, "Pipeline seed");
    forge->add_option("--max-statements", fa.max_statements, "Statements per description");
    forge->add_option("--out", fa.out, "Output directory")->required();

    TrainArgs ta;
    auto add_train_opts = [](CLI::App* s, TrainArgs& t) {
        s->add_option("--config", t.config, "JSON training config; flags override it");
        s->add_option("--dataset", t.dataset, "Dataset directory written by forge")->required();
        s->add_option("--beta", t.beta, "Preference temperature");
        s->add_option("--steps", t.steps, "Gradient steps");
        s->add_option("--lr", t.lr, "Learning rate");
        s->add_option("--batch", t.batch, "Minibatch size");
        s->add_option("--seed", t.seed, "Shuffle seed");
        s->add_option("--out", t.out, "Output directory")->required();
    };
    auto* train = app.add_subcommand("train", "Optimize the policy on a forged dataset");
    add_train_opts(train, ta);

    DiagnoseArgs da;
    auto* diagnose = app.add_subcommand("diagnose", "Misalignment, degeneration and smoothness reports");
    diagnose->add_option("--params", da.params, "Policy parameters")->required();
    diagnose->add_option("--dataset", da.dataset, "Dataset directory")->required();
    diagnose->add_option("--trace", da.trace, "Training trace CSV");
    diagnose->add_option("--n-min", da.n_min, "Smallest n-gram order");
    diagnose->add_option("--n-max", da.n_max, "Largest n-gram order");
    diagnose->add_option("--images", da.images, "Held-out scenes for the degeneration report");
    diagnose->add_option("--offset", da.offset, "First held-out scene id");
    diagnose->add_option("--beta", da.beta, "Temperature for the marker probe margins");
    diagnose->add_option("--out", da.out, "Output directory")->required();

    auto* evalc = app.add_subcommand("eval", "Hallucination metrics");
    evalc->require_subcommand(1);
    EvalArgs ea;
    auto add_eval_opts = [&ea](CLI::App* s) {
        s->add_option("--params", ea.params, "Policy parameters")->required();
        s->add_option("--dataset", ea.dataset, "Dataset directory the policy was trained on")->required();
        s->add_option("--images", ea.images, "Number of evaluation scenes");
        s->add_option("--offset", ea.offset, "First evaluation scene id");
        s->add_option("--seed", ea.seed, "World seed for evaluation scenes (default: the dataset's)");
        s->add_option("--out", ea.out, "Output directory")->required();
    };
    auto* shr = evalc->add_subcommand("shr", "Sentence-level hallucination ratio");
    add_eval_opts(shr);
    shr->add_option("--judge", ea.judge, "oracle | remote");
    shr->add_option("--judge-config", ea.judge_config, "JSON remote judge config");
    auto* pope = evalc->add_subcommand("pope", "Yes/no object probing");
    add_eval_opts(pope);
    pope->add_option("--split", ea.split, "random | popular | adversarial");
    pope->add_option("--count", ea.count, "Number of probes (even)");

    SweepArgs sa;
    auto* sweep = app.add_subcommand("sweep-beta", "Train once per beta and tabulate SHR, fluency and deviation");
    add_train_opts(sweep, sa.train);
    sweep->add_option("--betas", sa.betas, "Comma-separated beta grid")->delimiter(',');
    sweep->add_option("--images", sa.images, "Held-out scenes");
    sweep->add_option("--offset", sa.offset, "First held-out scene id");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (*forge) return cmd_forge(fa, *forge, cmd, out);
        if (*train) return cmd_train(ta, *train, cmd, out);
        if (*diagnose) return cmd_diagnose(da, cmd, out);
        if (*shr) return cmd_eval_shr(ea, *shr, cmd, out);
        if (*pope) return cmd_eval_pope(ea, *pope, cmd, out);
        if (*sweep) return cmd_sweep(sa, *sweep, cmd, out);
    } catch (const ConfigError& e) {
        err << "usage error: " << e.what() << '\n';
        return kUsage;
    } catch (const DivergenceError& e) {
        err << "diverged at step " << e.step << ": " << e.what() << '\n';
        return kDivergence;
    } catch (const Leakage& e) {
        err << "leakage: " << e.what() << '\n';
        return kLeakage;
    } catch (const StageError& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
    return kUsage;
}

}  // namespace hadpo::cli
