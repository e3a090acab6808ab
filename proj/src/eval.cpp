#include "hadpo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>

#include "hadpo/errors.hpp"
#include "hadpo/rng.hpp"

namespace hadpo::eval {

ShrReport shr(std::span<const JudgedResponse> responses, const JudgeFn& judge, std::string judge_name) {
    if (responses.empty()) throw InputError("SHR needs at least one response");
    std::vector<ShrRow> rows;
    rows.reserve(responses.size());
    for (const auto& r : responses) {
        const world::JudgeVerdict v = judge(r.scene, r.response);
        if (v.labels.size() != r.response.statements.size())
            throw Error("judge label count differs from sentence count on scene " + std::to_string(r.scene.id));
        rows.push_back({r.scene.id, r.response.statements.size(), v.hallucinated_count()});
    }
    return shr_from_rows(std::move(rows), std::move(judge_name));
}

ShrReport shr_from_rows(std::vector<ShrRow> rows, std::string judge_name) {
    ShrReport rep;
    std::size_t s = 0, h = 0;
    for (const auto& row : rows) {
        if (row.hallucinated > row.sentences) throw InputError("hallucinated count exceeds sentence count");
        s += row.sentences;
        h += row.hallucinated;
    }
    rep.rows = std::move(rows);
    rep.shr = s ? static_cast<double>(h) / static_cast<double>(s) : 0.0;
    rep.judge = std::move(judge_name);
    return rep;
}

nlohmann::ordered_json to_json(const ShrReport& r) {
    nlohmann::ordered_json j;
    j["metric"] = "shr";
    j["judge"] = r.judge;
    j["images"] = r.images();
    std::size_t s = 0, h = 0;
    for (const auto& row : r.rows) {
        s += row.sentences;
        h += row.hallucinated;
    }
    j["sentences"] = s;
    j["hallucinated"] = h;
    j["shr"] = r.shr;
    j["shr_percent"] = round2(100.0 * r.shr);
    auto& rows = j["rows"] = nlohmann::ordered_json::array();
    for (const auto& row : r.rows)
        rows.push_back({{"scene_id", row.scene_id}, {"sentences", row.sentences}, {"hallucinated", row.hallucinated}});
    return j;
}

void write_shr_text(std::ostream& out, const ShrReport& r) {
    std::size_t s = 0, h = 0;
    for (const auto& row : r.rows) {
        s += row.sentences;
        h += row.hallucinated;
    }
    out << std::fixed << std::setprecision(2) << "judge: " << r.judge << "\nimages: " << r.images()
        << "\nsentences: " << s << "\nhallucinated: " << h << "\nSHR (%): " << 100.0 * r.shr << '\n'
        << std::defaultfloat;
}

std::string to_string(PopeSplit s) {
    switch (s) {
        case PopeSplit::random: return "random";
        case PopeSplit::popular: return "popular";
        case PopeSplit::adversarial: return "adversarial";
    }
    return "?";
}

PopeSplit pope_split_from_string(const std::string& s) {
    if (s == "random") return PopeSplit::random;
    if (s == "popular") return PopeSplit::popular;
    if (s == "adversarial") return PopeSplit::adversarial;
    throw InputError("unknown POPE split '" + s + "'");
}

std::vector<PopeRecord> pope_questions(std::span<const world::Scene> scenes, int n_categories, PopeSplit split,
                                       std::int64_t count, std::uint64_t seed) {
    if (scenes.empty()) throw InputError("POPE needs at least one scene");
    if (count < 2 || count % 2 != 0) throw InputError("POPE probe count must be even and >= 2");

    // corpus statistics
    std::vector<std::size_t> freq(static_cast<std::size_t>(n_categories), 0);
    std::vector<std::vector<std::size_t>> cooc(n_categories, std::vector<std::size_t>(n_categories, 0));
    std::vector<std::vector<int>> present(scenes.size());
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        present[s] = scenes[s].categories();
        std::sort(present[s].begin(), present[s].end());
        present[s].erase(std::unique(present[s].begin(), present[s].end()), present[s].end());
        if (static_cast<int>(present[s].size()) >= n_categories)
            throw InputError("scene " + std::to_string(scenes[s].id) + " contains every category; no negatives");
        if (present[s].empty()) throw InputError("scene " + std::to_string(scenes[s].id) + " has no objects");
        for (int a : present[s]) {
            if (a < 0 || a >= n_categories) throw InputError("scene category outside vocabulary");
            ++freq[a];
            for (int b : present[s])
                if (a != b) ++cooc[a][b];
        }
    }

    std::vector<PopeRecord> out;
    out.reserve(static_cast<std::size_t>(count));
    const auto pairs = static_cast<std::size_t>(count / 2);
    for (std::size_t j = 0; j < pairs; ++j) {
        const std::size_t s = j % scenes.size();
        const std::size_t visit = j / scenes.size();
        Rng rng(derive_seed(seed, "pope", j));
        const auto& here = present[s];

        std::vector<int> absent;
        for (int c = 0; c < n_categories; ++c)
            if (!std::binary_search(here.begin(), here.end(), c)) absent.push_back(c);

        int negative = 0;
        switch (split) {
            case PopeSplit::random:
                negative = absent[rng.uniform_index(absent.size())];
                break;
            case PopeSplit::popular: {
                std::stable_sort(absent.begin(), absent.end(), [&](int a, int b) { return freq[a] > freq[b]; });
                negative = absent[visit % absent.size()];
                break;
            }
            case PopeSplit::adversarial: {
                std::vector<std::size_t> score(static_cast<std::size_t>(n_categories), 0);
                for (int b : absent)
                    for (int a : here) score[b] += cooc[a][b];
                std::stable_sort(absent.begin(), absent.end(), [&](int a, int b) {
                    if (score[a] != score[b]) return score[a] > score[b];
                    return freq[a] > freq[b];
                });
                negative = absent[visit % absent.size()];
                break;
            }
        }
        const int positive = here[rng.uniform_index(here.size())];
        out.push_back({scenes[s].id, positive, true, std::nullopt, split});
        out.push_back({scenes[s].id, negative, false, std::nullopt, split});
    }
    return out;
}

double pope_yes_probability(const policy::PolicyParams& params, const world::Lexicon& lex,
                            const policy::Prompt& prompt, int category) {
    const int n = lex.config().n_categories;
    if (category < 0 || category >= n) throw InputError("probed category outside vocabulary");
    const Token head = lex.kind_token(world::FactKind::object);
    const Eigen::VectorXd first = policy::log_softmax(
        policy::step_logits(params, policy::active_features(params.layout, prompt, std::nullopt)));
    const Eigen::VectorXd second =
        policy::log_softmax(policy::step_logits(params, policy::active_features(params.layout, prompt, head)));
    std::vector<double> score(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        double m = -std::numeric_limits<double>::infinity();
        for (int s = 0; s < lex.config().n_synonyms; ++s) m = std::max(m, second[lex.category_token(c, s)]);
        double acc = 0.0;
        for (int s = 0; s < lex.config().n_synonyms; ++s) acc += std::exp(second[lex.category_token(c, s)] - m);
        score[c] = first[head] + m + std::log(acc);
    }
    double others = 0.0;
    for (int c = 0; c < n; ++c)
        if (c != category) others += score[c];
    const double baseline = n > 1 ? others / (n - 1) : score[category];
    const double z = score[category] - baseline;
    return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

PopeRecord pope_answer(const policy::PolicyParams& params, const world::Lexicon& lex, const policy::Prompt& prompt,
                       PopeRecord stub, double threshold) {
    stub.answer = pope_yes_probability(params, lex, prompt, stub.category) > threshold;
    return stub;
}

PopeMetrics pope_score_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn) {
    const std::size_t n = tp + fp + tn + fn;
    if (n == 0) throw InputError("POPE scoring needs at least one record");
    PopeMetrics m;
    m.tp = tp;
    m.fp = fp;
    m.tn = tn;
    m.fn = fn;
    const double N = static_cast<double>(n);
    m.accuracy = 100.0 * static_cast<double>(tp + tn) / N;
    if (tp + fp == 0) {
        m.precision = 0.0;
        m.precision_undefined = true;
    } else {
        m.precision = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
    }
    m.recall = tp + fn ? 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.yes_ratio = 100.0 * static_cast<double>(tp + fp) / N;
    return m;
}

PopeMetrics pope_score(std::span<const PopeRecord> records) {
    if (records.empty()) throw InputError("POPE scoring needs at least one record");
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& r : records) {
        if (!r.answer) throw InputError("POPE record for scene " + std::to_string(r.scene_id) + " is unanswered");
        if (*r.answer)
            (r.truth ? tp : fp)++;
        else
            (r.truth ? fn : tn)++;
    }
    return pope_score_counts(tp, fp, tn, fn);
}

double round2(double x) { return std::round(x * 100.0) / 100.0; }

nlohmann::ordered_json to_json(const PopeMetrics& m) {
    nlohmann::ordered_json j;
    j["accuracy"] = round2(m.accuracy);
    j["precision"] = round2(m.precision);
    j["recall"] = round2(m.recall);
    j["f1"] = round2(m.f1);
    j["yes_ratio"] = round2(m.yes_ratio);
    j["precision_undefined"] = m.precision_undefined;
    j["confusion"] = {{"tp", m.tp}, {"fp", m.fp}, {"tn", m.tn}, {"fn", m.fn}};
    return j;
}

nlohmann::ordered_json to_json(const PopeRecord& r) {
    nlohmann::ordered_json j;
    j["scene_id"] = r.scene_id;
    j["category"] = r.category;
    j["truth"] = r.truth ? "yes" : "no";
    if (r.answer)
        j["answer"] = *r.answer ? "yes" : "no";
    else
        j["answer"] = nullptr;
    j["split"] = to_string(r.split);
    return j;
}

void write_pope_text(std::ostream& out, const PopeMetrics& m, const std::string& split) {
    out << std::fixed << std::setprecision(2);
    out << std::left << std::setw(12) << "split" << std::right << std::setw(10) << "Accuracy" << std::setw(11)
        << "Precision" << std::setw(9) << "Recall" << std::setw(10) << "F1" << std::setw(11) << "Yes(%)" << '\n';
    out << std::left << std::setw(12) << split << std::right << std::setw(10) << m.accuracy << std::setw(11)
        << m.precision << std::setw(9) << m.recall << std::setw(10) << m.f1 << std::setw(11) << m.yes_ratio << '\n';
    if (m.precision_undefined) out << "note: no yes answers; precision reported as 0\n";
    out << std::defaultfloat;
}

}  // namespace hadpo::eval
