#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hadpo/policy.hpp"
#include "hadpo/trace.hpp"

namespace hadpo::dpo {

using policy::Matrix;
using policy::PolicyParams;
using policy::Prompt;

struct PreferencePair {
    Prompt prompt;
    std::vector<Token> y_pos;
    std::vector<Token> y_neg;
    std::string provenance;

    // Throws InputError when either side is empty, out of vocabulary, or the sides coincide.
    void validate(const policy::FeatureLayout& layout) const;
};

struct TrainConfig {
    double beta = 0.1;
    double learning_rate = 0.05;
    std::int64_t steps = 500;
    std::int64_t batch_size = 8;
    std::uint64_t seed = 0;
    bool style_confound = false;  // recorded only; the dataset carries the confound

    void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TrainResult {
    PolicyParams params;
    DiagnosticsTrace trace;
};

double sigmoid(double x);
/// log(1 + e^x) without overflow.
double softplus(double x);

/// beta * (log pi_theta(y) - log pi_ref(y))
double implicit_reward(const PolicyParams& theta, const PolicyParams& ref, const Prompt& prompt,
                       std::span<const Token> y, double beta);

/// implicit_reward(y_pos) - implicit_reward(y_neg)
double reward_margin(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair, double beta);

/// -log sigmoid(margin), evaluated as softplus(-margin).
double pair_loss(const PolicyParams& theta, const PolicyParams& ref, const PreferencePair& pair, double beta);

struct BatchStats {
    double loss = 0.0;    // batch mean
    double margin = 0.0;  // batch mean
};

/// Gradient of the batch-mean pair loss:
///   -beta * mean_i sigmoid(r_neg - r_pos) * (grad log pi(y_pos) - grad log pi(y_neg))
/// The weighting coefficient sigmoid(r_neg - r_pos) is large while the implicit
/// reward still ranks the pair wrongly and vanishes once the margin is large.
Matrix loss_grad(const PolicyParams& theta, const PolicyParams& ref, std::span<const PreferencePair> batch,
                 double beta);

/// Same as loss_grad but accumulates into `out` (which it zeroes first) and
/// takes the reference log-likelihoods precomputed per pair.
BatchStats loss_grad_into(const PolicyParams& theta, std::span<const PreferencePair* const> batch,
                          std::span<const double> ref_pos, std::span<const double> ref_neg, double beta,
                          Matrix& out);

using StepObserver = std::function<void(std::int64_t step, const PolicyParams& theta, DiagnosticsTrace& trace)>;

/// Plain gradient descent on the mean pair loss against a frozen copy of
/// `init`. Minibatches come from per-epoch seeded shuffles of the dataset.
/// Throws DivergenceError on any non-finite loss, gradient, or parameter.
TrainResult train(std::span<const PreferencePair> dataset, const PolicyParams& init, const TrainConfig& cfg,
                  const StepObserver& observer = {});

}  // namespace hadpo::dpo
