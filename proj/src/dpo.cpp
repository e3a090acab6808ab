#include "hadpo/dpo.hpp"

#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "hadpo/errors.hpp"
#include "hadpo/rng.hpp"

namespace hadpo {

void write_trace_csv(std::ostream& out, const DiagnosticsTrace& trace) {
    out << "step,loss,margin,grad_norm\n";
    const auto old = out.precision(17);
    for (std::size_t i = 0; i < trace.size(); ++i)
        out << i + 1 << ',' << trace.loss[i] << ',' << trace.margin[i] << ',' << trace.grad_norm[i] << '\n';
    out.precision(old);
}

DiagnosticsTrace read_trace_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "step,loss,margin,grad_norm") throw InputError("trace CSV header missing");
    DiagnosticsTrace t;
    std::int64_t expect = 1;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell[4];
        for (auto& c : cell)
            if (!std::getline(row, c, ',')) throw InputError("trace CSV row has fewer than 4 cells: " + line);
        try {
            if (std::stoll(cell[0]) != expect++) throw InputError("trace CSV steps out of order");
            t.push(std::stod(cell[1]), std::stod(cell[2]), std::stod(cell[3]));
        } catch (const std::logic_error&) {
            throw InputError("trace CSV row is not numeric: " + line);
        }
    }
    return t;
}

}  // namespace hadpo

namespace hadpo::dpo {

void PreferencePair::validate(const policy::FeatureLayout& layout) const {
    policy::check_prompt(layout, prompt);
    if (y_pos.empty() || y_neg.empty()) throw InputError("preference pair has an empty response");
    if (y_pos == y_neg) throw InputError("preference pair has identical responses");
    for (const auto* y : {&y_pos, &y_neg})
        for (Token t : *y)
            if (t < 0 || t >= layout.vocab) throw InputError("preference pair token outside vocabulary");
}

void TrainConfig::validate() const {
    if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be > 0");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be >= 0");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = nlohmann::json{{"beta", c.beta},   {"learning_rate", c.learning_rate},   {"steps", c.steps},
                       {"batch_size", c.batch_size}, {"seed", c.seed}, {"style_confound", c.style_confound}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.beta = j.value("beta", c.beta);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.steps = j.value("steps", c.steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.style_confound = j.value("style_confound", c.style_confound);
}

double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double implicit_reward(const PolicyParams& theta, const PolicyParams& ref, const Prompt& prompt,
                       std::span<const Token> y, double beta) {
    if (!(beta > 0.0)) throw InputError("beta must be > 0");
    return beta * (policy::log_likelihood(theta, prompt, y) - policy::log_likelihood(ref, prompt, y));
}

double reward_margin(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair, double beta) {
    return implicit_reward(theta, ref, pair.prompt, pair.y_pos, beta) -
           implicit_reward(theta, ref, pair.prompt, pair.y_neg, beta);
}

double pair_loss(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair, double beta) {
    return softplus(-reward_margin(theta, ref, pair, beta));
}

BatchStats loss_grad_into(const PolicyParams& theta, std::span<const PreferencePair* const> batch,
                          std::span<const double> ref_pos, std::span<const double> ref_neg, double beta,
                          Matrix& out) {
    if (batch.empty()) throw InputError("batch is empty");
    out.setZero(theta.weights.rows(), theta.weights.cols());
    const double n = static_cast<double>(batch.size());
    BatchStats stats;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const PreferencePair& pair = *batch[i];
        const double lp = policy::log_likelihood(theta, pair.prompt, pair.y_pos);
        const double ln = policy::log_likelihood(theta, pair.prompt, pair.y_neg);
        const double margin = beta * ((lp - ref_pos[i]) - (ln - ref_neg[i]));
        const double weight = sigmoid(-margin);
        const double scale = -beta * weight / n;
        policy::accumulate_loglik_grad(theta, pair.prompt, pair.y_pos, scale, out);
        policy::accumulate_loglik_grad(theta, pair.prompt, pair.y_neg, -scale, out);
        stats.loss += softplus(-margin) / n;
        stats.margin += margin / n;
    }
    return stats;
}

Matrix loss_grad(const PolicyParams& theta, const PolicyParams& ref, std::span<const PreferencePair> batch,
                 double beta) {
    if (!(beta > 0.0)) throw InputError("beta must be > 0");
    std::vector<const PreferencePair*> ptrs;
    std::vector<double> rp, rn;
    for (const auto& p : batch) {
        ptrs.push_back(&p);
        rp.push_back(policy::log_likelihood(ref, p.prompt, p.y_pos));
        rn.push_back(policy::log_likelihood(ref, p.prompt, p.y_neg));
    }
    Matrix g;
    loss_grad_into(theta, ptrs, rp, rn, beta, g);
    return g;
}

TrainResult train(std::span<const PreferencePair> dataset, const PolicyParams& init, const TrainConfig& cfg,
                  const StepObserver& observer) {
    cfg.validate();
    if (dataset.empty()) throw InputError("training dataset is empty");
    for (const auto& p : dataset) p.validate(init.layout);

    const PolicyParams ref = init;  // frozen
    std::vector<double> ref_pos(dataset.size()), ref_neg(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        ref_pos[i] = policy::log_likelihood(ref, dataset[i].prompt, dataset[i].y_pos);
        ref_neg[i] = policy::log_likelihood(ref, dataset[i].prompt, dataset[i].y_neg);
    }

    TrainResult result{init, {}};
    PolicyParams& theta = result.params;
    Matrix grad;

    std::vector<std::size_t> order(dataset.size());
    std::size_t cursor = order.size();
    std::uint64_t epoch = 0;
    const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
    std::vector<const PreferencePair*> batch;
    std::vector<double> batch_rp, batch_rn;

    for (std::int64_t step = 1; step <= cfg.steps; ++step) {
        batch.clear();
        batch_rp.clear();
        batch_rn.clear();
        while (batch.size() < batch_size) {
            if (cursor == order.size()) {
                std::iota(order.begin(), order.end(), std::size_t{0});
                Rng rng(derive_seed(cfg.seed, "train-epoch", epoch++));
                rng.shuffle(std::span(order));
                cursor = 0;
            }
            const std::size_t k = order[cursor++];
            batch.push_back(&dataset[k]);
            batch_rp.push_back(ref_pos[k]);
            batch_rn.push_back(ref_neg[k]);
        }

        const BatchStats stats = loss_grad_into(theta, batch, batch_rp, batch_rn, cfg.beta, grad);
        const double norm = grad.norm();
        if (!std::isfinite(stats.loss) || !std::isfinite(stats.margin))
            throw DivergenceError(step, "non-finite loss");
        if (!std::isfinite(norm)) throw DivergenceError(step, "non-finite gradient");
        result.trace.push(stats.loss, stats.margin, norm);

        theta.weights -= cfg.learning_rate * grad;
        if (!theta.all_finite()) throw DivergenceError(step, "non-finite parameters after update");
        if (observer) observer(step, theta, result.trace);
    }
    return result;
}

}  // namespace hadpo::dpo
