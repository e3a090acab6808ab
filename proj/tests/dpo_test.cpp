#include <doctest.h>

#include <cmath>
#include <limits>

#include "hadpo/datagen.hpp"
#include "hadpo/dpo.hpp"
#include "hadpo/errors.hpp"
#include "helpers.hpp"

using namespace hadpo;
using namespace hadpo::dpo;
using testing::random_pair;
using testing::random_params;
using testing::small_layout;

namespace {

double max_rel_error(const Matrix& a, const Matrix& b) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double x = a.data()[i], y = b.data()[i];
        worst = std::max(worst, std::abs(x - y) / std::max(1.0, std::max(std::abs(x), std::abs(y))));
    }
    return worst;
}

double batch_loss(const PolicyParams& t, const PolicyParams& r, std::span<const PreferencePair> b, double beta) {
    double s = 0.0;
    for (const auto& p : b) s += pair_loss(t, r, p, beta);
    return s / static_cast<double>(b.size());
}

}  // namespace

TEST_CASE("scalar helpers") {
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(sigmoid(-800.0) >= 0.0);
    CHECK(sigmoid(800.0) == 1.0);
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(softplus(800.0) == doctest::Approx(800.0));
    CHECK(softplus(-800.0) >= 0.0);
    CHECK(softplus(-0.5) == doctest::Approx(0.474077).epsilon(1e-6));
    CHECK(softplus(-1.0) < softplus(0.0));
    CHECK(softplus(0.0) < softplus(1.0));
}

TEST_CASE("implicit reward and margin") {
    Rng rng(1);
    const auto l = small_layout(6);
    const auto ref = random_params(l, rng);
    const auto theta = random_params(l, rng);
    const auto pair = random_pair(l, rng);

    CHECK(implicit_reward(ref, ref, pair.prompt, pair.y_pos, 0.1) == 0.0);
    CHECK(reward_margin(ref, ref, pair, 0.1) == 0.0);
    CHECK(pair_loss(ref, ref, pair, 0.1) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

    const double r1 = implicit_reward(theta, ref, pair.prompt, pair.y_pos, 0.1);
    CHECK(implicit_reward(theta, ref, pair.prompt, pair.y_pos, 0.2) == doctest::Approx(2 * r1).epsilon(1e-12));
    CHECK(r1 == doctest::Approx(0.1 * (policy::log_likelihood(theta, pair.prompt, pair.y_pos) -
                                       policy::log_likelihood(ref, pair.prompt, pair.y_pos)))
                    .epsilon(1e-12));
    CHECK(reward_margin(theta, ref, pair, 0.3) == doctest::Approx(3 * reward_margin(theta, ref, pair, 0.1)));
    CHECK_THROWS_AS(implicit_reward(theta, ref, pair.prompt, pair.y_pos, 0.0), InputError);
}

TEST_CASE("loss closed form: delta_pos = 2, delta_neg = -3, beta = 0.1") {
    // One-step model over 8 tokens; the reference is uniform, and theta's bias
    // column holds log-probabilities chosen so that the log-ratios are exactly 2 and -3.
    const auto l = small_layout(8, 1, 0);
    const PolicyParams ref(l);
    PolicyParams theta(l);
    const double p0 = std::exp(2.0) / 8, p1 = std::exp(-3.0) / 8, rest = (1 - p0 - p1) / 6;
    const auto bias = static_cast<Eigen::Index>(l.bias_index());
    for (int t = 0; t < 8; ++t) theta.weights(t, bias) = std::log(t == 0 ? p0 : t == 1 ? p1 : rest);
    const PreferencePair p{policy::Prompt{0, {}}, {0}, {1}, ""};
    CHECK(implicit_reward(theta, ref, p.prompt, p.y_pos, 1.0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(implicit_reward(theta, ref, p.prompt, p.y_neg, 1.0) == doctest::Approx(-3.0).epsilon(1e-12));
    CHECK(reward_margin(theta, ref, p, 0.1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(pair_loss(theta, ref, p, 0.1) == doctest::Approx(0.474077).epsilon(1e-6));
}

TEST_CASE("pair_loss = softplus(-margin) on 1000 random instances") {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const auto l = small_layout(2 + static_cast<int>(rng.uniform_index(7)), 2, 4);
        const auto ref = random_params(l, rng);
        const auto theta = random_params(l, rng);
        const auto p = random_pair(l, rng);
        const double beta = 0.05 + rng.uniform01();
        CHECK(std::abs(pair_loss(theta, ref, p, beta) - softplus(-reward_margin(theta, ref, p, beta))) < 1e-12);
    }
}

TEST_CASE("loss_grad matches finite differences of the batch-mean loss") {
    Rng rng(3);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto l = small_layout(2 + static_cast<int>(rng.uniform_index(7)), 2, 4);
        const auto ref = random_params(l, rng);
        auto theta = random_params(l, rng);
        std::vector<PreferencePair> batch;
        for (std::size_t k = 0, n = 1 + rng.uniform_index(4); k < n; ++k) batch.push_back(random_pair(l, rng));
        const double beta = 0.05 + rng.uniform01();
        const Matrix g = loss_grad(theta, ref, batch, beta);
        Matrix fd(g.rows(), g.cols());
        const double h = 1e-5;
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            const double w = theta.weights.data()[i];
            theta.weights.data()[i] = w + h;
            const double up = batch_loss(theta, ref, batch, beta);
            theta.weights.data()[i] = w - h;
            const double down = batch_loss(theta, ref, batch, beta);
            theta.weights.data()[i] = w;
            fd.data()[i] = (up - down) / (2 * h);
        }
        worst = std::max(worst, max_rel_error(g, fd));
    }
    CHECK(worst < 1e-6);
}

TEST_CASE("loss_grad at theta = ref weighs every pair by one half") {
    Rng rng(4);
    const auto l = small_layout(5);
    const auto ref = random_params(l, rng);
    std::vector<PreferencePair> batch{random_pair(l, rng), random_pair(l, rng)};
    Matrix expect = Matrix::Zero(ref.weights.rows(), ref.weights.cols());
    for (const auto& p : batch)
        expect -= 0.1 * 0.5 / 2.0 *
                  (policy::loglik_grad(ref, p.prompt, p.y_pos) - policy::loglik_grad(ref, p.prompt, p.y_neg));
    CHECK(max_rel_error(loss_grad(ref, ref, batch, 0.1), expect) < 1e-14);

    std::vector<PreferencePair> swapped{batch[1], batch[0]};
    CHECK(max_rel_error(loss_grad(ref, ref, batch, 0.1), loss_grad(ref, ref, swapped, 0.1)) < 1e-15);
}

TEST_CASE("pair validation") {
    const auto l = small_layout(4);
    PreferencePair same{policy::Prompt{0, {}}, {1, 2}, {1, 2}, ""};
    CHECK_THROWS_AS(same.validate(l), InputError);
    PreferencePair empty{policy::Prompt{0, {}}, {}, {1}, ""};
    CHECK_THROWS_AS(empty.validate(l), InputError);
    PreferencePair oov{policy::Prompt{0, {}}, {9}, {1}, ""};
    CHECK_THROWS_AS(oov.validate(l), InputError);
}

TEST_CASE("a small step decreases the pair loss") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const auto l = small_layout(5);
        const auto ref = random_params(l, rng);
        auto theta = random_params(l, rng);
        const std::vector<PreferencePair> one{random_pair(l, rng)};
        const double before = batch_loss(theta, ref, one, 0.5);
        double lr = 1e-3;
        auto stepped = theta;
        stepped.weights -= lr * loss_grad(theta, ref, one, 0.5);
        if (!(batch_loss(stepped, ref, one, 0.5) < before)) {
            lr /= 10;
            stepped = theta;
            stepped.weights -= lr * loss_grad(theta, ref, one, 0.5);
        }
        CHECK(batch_loss(stepped, ref, one, 0.5) < before);
    }
}

TEST_CASE("training contract") {
    Rng rng(6);
    const auto l = small_layout(6);
    const auto init = random_params(l, rng);
    std::vector<PreferencePair> data;
    for (int i = 0; i < 20; ++i) data.push_back(random_pair(l, rng));

    SUBCASE("steps = 0 is rejected") {
        TrainConfig c;
        c.steps = 0;
        CHECK_THROWS_AS(train(data, init, c), ConfigError);
    }
    SUBCASE("one step at lr 0 leaves params untouched") {
        TrainConfig c;
        c.steps = 1;
        c.learning_rate = 0.0;
        const auto r = train(data, init, c);
        CHECK(r.params.weights == init.weights);
        CHECK(r.trace.margin == std::vector<double>{0.0});
        CHECK(r.trace.loss[0] == doctest::Approx(std::log(2.0)));
    }
    SUBCASE("bit-identical reruns") {
        TrainConfig c;
        c.steps = 40;
        c.seed = 3;
        c.batch_size = 3;
        const auto a = train(data, init, c);
        const auto b = train(data, init, c);
        CHECK(a.params.weights == b.params.weights);
        CHECK(a.trace == b.trace);
        CHECK(a.trace.size() == 40);
        c.seed = 4;
        CHECK(train(data, init, c).trace.loss != a.trace.loss);
    }
    SUBCASE("loss falls on separable data") {
        TrainConfig c;
        c.steps = 200;
        c.learning_rate = 0.5;
        const auto r = train(data, init, c);
        CHECK(r.trace.loss.back() < r.trace.loss.front());
        CHECK(r.trace.margin.back() > 0.0);
    }
    SUBCASE("an exploding step raises a divergence error with its step") {
        TrainConfig c;
        c.steps = 50;
        auto huge = init;
        huge.weights.setConstant(std::numeric_limits<double>::max() / 2);  // logits overflow
        try {
            train(data, huge, c);
            FAIL("expected divergence");
        } catch (const DivergenceError& e) {
            CHECK(e.step >= 1);
            CHECK(e.step <= 50);
        }
    }
}

TEST_CASE("held-out margin is positive on a one-slot separable task") {
    // Positives name an object in the scene, negatives one that is absent;
    // everything else about the two responses is identical.
    const world::WorldConfig wc;
    const world::Lexicon lex{wc};
    const auto init = datagen::initial_policy(lex, 1, datagen::InitConfig{0.5, 0.0, -8.0});
    auto make = [&](std::int64_t offset, int n) {
        std::vector<PreferencePair> out;
        for (const auto& s : datagen::make_scenes(wc, 1, offset, n)) {
            const auto cats = s.categories();
            int absent = 0;
            while (s.contains(world::Fact::object(absent))) ++absent;
            const auto prefix = world::realize_with(lex, s.facts.back()).tokens;
            PreferencePair p;
            p.prompt = policy::make_prompt(lex, s, 0);
            p.y_pos = prefix;
            p.y_neg = prefix;
            for (Token t : world::realize_with(lex, world::Fact::object(cats[0])).tokens) p.y_pos.push_back(t);
            for (Token t : world::realize_with(lex, world::Fact::object(absent)).tokens) p.y_neg.push_back(t);
            out.push_back(std::move(p));
        }
        return out;
    };
    const auto train_set = make(0, 200);
    const auto held = make(50000, 50);
    TrainConfig c;
    c.steps = 500;
    c.seed = 7;
    const auto r = train(train_set, init, c);
    double m = 0.0;
    for (const auto& p : held) m += reward_margin(r.params, init, p, c.beta);
    CHECK(m / held.size() > 0.0);
}

TEST_CASE("train config JSON") {
    TrainConfig c;
    c.beta = 0.3;
    c.steps = 17;
    const nlohmann::json j = c;
    const auto back = j.get<TrainConfig>();
    CHECK(back.beta == 0.3);
    CHECK(back.steps == 17);
    CHECK(back.learning_rate == c.learning_rate);
}
