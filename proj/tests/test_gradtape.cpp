#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "chainmp/gradtape.hpp"
#include "chainmp/rng.hpp"

using namespace chainmp;
using ad::Shape;
using ad::Tape;
using ad::Var;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Random entries with magnitude in [0.1, 10] and random sign.
Tensor magnitude_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
    return t;
}

using Program = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Scalar value of `program` evaluated on fresh constants.
double evaluate(const Program& program, const std::vector<Tensor>& inputs) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& t : inputs) vars.push_back(tape.constant(t));
    return program(tape, vars).value().item();
}

/// ||analytic - numeric|| / max(||analytic||, ||numeric||), central differences.
double gradient_error(const Program& program, const std::vector<Tensor>& inputs, double h = 1e-5) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
    const Var root = program(tape, leaves);
    const auto grads = tape.backward(root, leaves);

    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (std::size_t k = 0; k < inputs[i].size(); ++k) {
            auto plus = inputs, minus = inputs;
            plus[i][k] += h;
            minus[i][k] -= h;
            const double num = (evaluate(program, plus) - evaluate(program, minus)) / (2.0 * h);
            const double ana = grads[i][k];
            diff += (ana - num) * (ana - num);
            na += ana * ana;
            nn += num * num;
        }
    }
    const double scale = std::max(std::sqrt(std::max(na, nn)), 1e-10);
    return std::sqrt(diff) / scale;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
    const Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    EXPECT_EQ(t.at(1, 2), 6.0);
    EXPECT_THROW(t.reshaped({4}), DimensionError);
    EXPECT_THROW(t.item(), ContractError);
}

TEST(Ops, AddIsElementwise) {
    Tape tape;
    const Var y = ad::add(tape.constant(Tensor::vector({1, 2})), tape.constant(Tensor::vector({3, 4})));
    EXPECT_EQ(y.value(), Tensor::vector({4, 6}));
}

TEST(Ops, MatmulByIdentity) {
    Tape tape;
    const Var y = ad::matmul(tape.constant(Tensor::matrix({{1, 0}, {0, 1}})), tape.constant(Tensor::matrix({{5}, {7}})));
    EXPECT_EQ(y.value(), Tensor::matrix({{5}, {7}}));
}

TEST(Ops, SumOfSquares) {
    Tape tape;
    EXPECT_EQ(ad::sum(ad::square(tape.constant(Tensor::vector({3, 4})))).value().item(), 25.0);
}

TEST(Ops, ShapeMismatchNamesBothShapes) {
    Tape tape;
    const Var a = tape.constant(Tensor(Shape{2, 3}));
    const Var b = tape.constant(Tensor(Shape{3, 2}));
    try {
        ad::add(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
        EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
    }
    EXPECT_THROW(ad::matmul(a, a), DimensionError);
    EXPECT_THROW(ad::concat_cols(a, tape.constant(Tensor(Shape{3, 1}))), DimensionError);
    EXPECT_THROW(ad::select_rows(a, {2}), DimensionError);
}

TEST(Backward, SquareGradient) {
    Tape tape;
    const Var x = tape.leaf(Tensor::vector({3, 4}));
    const auto g = tape.backward(ad::sum(ad::square(x)), {x});
    EXPECT_EQ(g[0], Tensor::vector({6, 8}));
}

TEST(Backward, StopGradientBlocksFlow) {
    Tape tape;
    const Var x = tape.leaf(Tensor::vector({1, 2}));
    const Var y = tape.leaf(Tensor::vector({5, -3}));
    const auto g = tape.backward(ad::sum(ad::mul(ad::stop_gradient(x), y)), {x, y});
    EXPECT_EQ(g[0], Tensor::vector({0, 0}));
    EXPECT_EQ(g[1], Tensor::vector({1, 2}));
}

TEST(Backward, StopGradientForwardIsBitwiseIdentity) {
    Rng rng(3);
    Tape tape;
    const Tensor v = random_tensor({4, 5}, rng, -1e3, 1e3);
    EXPECT_EQ(ad::stop_gradient(tape.leaf(v)).value(), v);
    EXPECT_EQ(ad::stop_gradient(tape.leaf(Tensor::vector({1, 2}))).value(), Tensor::vector({1, 2}));
}

TEST(Backward, StopGradientOnZeroResidual) {
    Tape tape;
    const Var a = tape.leaf(Tensor::scalar(1.0));
    const Var b = tape.leaf(Tensor::scalar(1.0));
    const auto g = tape.backward(ad::square(ad::sub(ad::stop_gradient(a), b)), {a, b});
    EXPECT_EQ(g[0].item(), 0.0);
    EXPECT_EQ(g[1].item(), 0.0);
}

TEST(Backward, UnusedLeafGetsZeros) {
    Tape tape;
    const Var x = tape.leaf(Tensor::vector({1, 2}));
    const Var unused = tape.leaf(Tensor(Shape{2, 2}, 7.0));
    const auto g = tape.backward(ad::sum(x), {x, unused});
    EXPECT_EQ(g[1], Tensor(Shape{2, 2}));
}

TEST(Backward, ContractErrors) {
    Tape tape, other;
    const Var x = tape.leaf(Tensor::vector({1, 2}));
    EXPECT_THROW(tape.backward(ad::square(x), {x}), ContractError);
    const Var y = other.leaf(Tensor::vector({1, 2}));
    EXPECT_THROW(tape.backward(ad::sum(x), {y}), ContractError);
    const Var derived = ad::scale(x, 2.0);
    EXPECT_THROW(tape.backward(ad::sum(x), {derived}), ContractError);
}

TEST(Backward, Deterministic) {
    Rng rng(11);
    const Tensor w = random_tensor({6, 4}, rng), xin = random_tensor({3, 6}, rng);
    auto run = [&] {
        Tape tape;
        const Var x = tape.leaf(xin), wv = tape.leaf(w);
        return tape.backward(ad::sum(ad::tanh(ad::matmul(x, wv))), {x, wv});
    };
    const auto a = run(), b = run();
    EXPECT_EQ(a[0], b[0]);
    EXPECT_EQ(a[1], b[1]);
}

TEST(Backward, L2NormAtOriginHasZeroGradient) {
    Tape tape;
    const Var x = tape.leaf(Tensor(Shape{3}));
    EXPECT_EQ(tape.backward(ad::l2norm(x), {x})[0], Tensor(Shape{3}));
}

// Every differentiable op against central differences on 100 seeds.
TEST(FiniteDifference, EachOpOnHundredSeeds) {
    const std::vector<std::pair<const char*, Program>> ops = {
        {"add", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::square(ad::add(v[0], v[1]))); }},
        {"sub", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::square(ad::sub(v[0], v[1]))); }},
        {"mul", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::mul(v[0], v[1])); }},
        {"scale", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::square(ad::scale(v[0], -1.7))); }},
        {"matmul", [](Tape&, const std::vector<Var>& v) {
             return ad::sum(ad::square(ad::matmul(v[0], ad::reshape(v[1], {3, 2}))));
         }},
        {"mean", [](Tape&, const std::vector<Var>& v) { return ad::mean(ad::square(v[0])); }},
        {"sqrt", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::sqrt(ad::square(v[0]))); }},
        {"tanh", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::tanh(ad::scale(v[0], 0.1))); }},
        {"silu", [](Tape&, const std::vector<Var>& v) { return ad::sum(ad::silu(v[0])); }},
        {"l2norm", [](Tape&, const std::vector<Var>& v) { return ad::l2norm(v[0]); }},
        {"select_rows", [](Tape&, const std::vector<Var>& v) {
             return ad::sum(ad::square(ad::select_rows(v[0], {1, 0, 1})));
         }},
        {"concat", [](Tape&, const std::vector<Var>& v) {
             return ad::sum(ad::square(ad::concat_cols(v[0], ad::reshape(v[1], {2, 3}))));
         }},
        {"add_bias", [](Tape& t, const std::vector<Var>& v) {
             return ad::sum(ad::square(ad::add_bias(v[0], ad::reshape(ad::select_rows(v[1], {0}), {3}))));
             (void)t;
         }},
    };
    for (const auto& [name, program] : ops) {
        double worst = 0.0;
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed);
            const std::vector<Tensor> inputs{magnitude_tensor({2, 3}, rng), magnitude_tensor({2, 3}, rng)};
            worst = std::max(worst, gradient_error(program, inputs));
        }
        EXPECT_LT(worst, 1e-4) << name;
    }
}

// Random two-layer networks on 8 inputs.
TEST(FiniteDifference, HundredRandomNetworks) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(1000 + seed);
        const std::size_t hidden = 3 + rng.below(6);
        const bool use_tanh = rng.uniform() < 0.5;
        const std::vector<Tensor> inputs{random_tensor({2, 8}, rng), random_tensor({8, hidden}, rng),
                                         random_tensor({hidden}, rng), random_tensor({hidden, 2}, rng),
                                         random_tensor({2}, rng)};
        const Program net = [use_tanh](Tape&, const std::vector<Var>& v) {
            Var h = ad::add_bias(ad::matmul(v[0], v[1]), v[2]);
            h = use_tanh ? ad::tanh(h) : ad::silu(h);
            const Var y = ad::add_bias(ad::matmul(h, v[3]), v[4]);
            return ad::mean(ad::square(y));
        };
        worst = std::max(worst, gradient_error(net, inputs));
    }
    EXPECT_LT(worst, 1e-4);
}

// Loss compositions with stop-gradient terms. The numeric oracle perturbs only
// the live copy of each input; the frozen copy stays at the base point.
TEST(FiniteDifference, TwentyCompositionsWithStopGradient) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(5000 + seed);
        const double gamma = rng.uniform(0.2, 1.0);
        const int kind = static_cast<int>(seed % 4);
        const Tensor a0 = random_tensor({3, 2}, rng), b0 = random_tensor({3, 2}, rng), w0 = random_tensor({2, 2}, rng);

        // f(live, frozen): frozen values enter where the tape applies stop_gradient.
        auto composed = [kind, gamma](const Var& a, const Var& b, const Var& w, const Var& a_sg, const Var& b_sg) {
            const Var fa = ad::tanh(ad::matmul(a, w));
            const Var fa_sg = ad::tanh(ad::matmul(a_sg, w));
            switch (kind) {
                case 0: return ad::add(ad::sum(ad::square(ad::sub(fa_sg, b))), ad::scale(ad::sum(ad::square(a)), gamma));
                case 1: return ad::add(ad::scale(ad::sum(ad::square(ad::sub(b_sg, fa))), gamma),
                                       ad::sum(ad::square(ad::sub(a, b_sg))));
                case 2: return ad::add(ad::l2norm(ad::sub(ad::select_rows(fa_sg, {0}), ad::select_rows(b, {2}))),
                                       ad::mean(ad::silu(ad::mul(a, b_sg))));
                default: return ad::sum(ad::mul(ad::sqrt(ad::add(ad::square(a), ad::square(b_sg))), ad::scale(fa_sg, gamma)));
            }
        };
        const Program tape_program = [&](Tape&, const std::vector<Var>& v) {
            return composed(v[0], v[1], v[2], ad::stop_gradient(v[0]), ad::stop_gradient(v[1]));
        };
        const Program oracle_program = [&](Tape& t, const std::vector<Var>& v) {
            return composed(v[0], v[1], v[2], t.constant(a0), t.constant(b0));
        };

        Tape tape;
        const Var a = tape.leaf(a0), b = tape.leaf(b0), w = tape.leaf(w0);
        const auto grads = tape.backward(tape_program(tape, {a, b, w}), {a, b, w});
        std::vector<Tensor> inputs{a0, b0, w0};
        const double h = 1e-5;
        double diff = 0.0, norm = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i)
            for (std::size_t k = 0; k < inputs[i].size(); ++k) {
                auto plus = inputs, minus = inputs;
                plus[i][k] += h;
                minus[i][k] -= h;
                const double num = (evaluate(oracle_program, plus) - evaluate(oracle_program, minus)) / (2 * h);
                diff += (grads[i][k] - num) * (grads[i][k] - num);
                norm += num * num;
            }
        worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-10));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(Tape, ParentsPrecedeChildren) {
    Tape tape;
    const Var x = tape.leaf(Tensor::vector({1, 2, 3}));
    const Var y = ad::sum(ad::tanh(ad::scale(x, 2.0)));
    for (std::size_t id = 0; id < tape.size(); ++id)
        for (auto p : tape.parents(id)) EXPECT_LT(p, id);
    EXPECT_EQ(y.id(), tape.size() - 1);
}
