#include <gtest/gtest.h>

#include <cmath>

#include "chainmp/chain.hpp"

using namespace chainmp;

namespace {

FactorChain chain_of(std::size_t n, std::size_t F = 3, std::size_t d = 2) {
    return FactorChain(n, F, d, std::vector<double>(d, 0.0), std::vector<double>(d, 1.0));
}

}  // namespace

TEST(FactorChain, FrameCount) {
    EXPECT_EQ(chain_of(3).m(), 7u);
    for (std::size_t n = 1; n < 6; ++n)
        for (std::size_t F = 2; F < 6; ++F) EXPECT_EQ(chain_of(n, F).m(), n * (F - 1) + 1);
}

TEST(FactorChain, Validation) {
    EXPECT_THROW(chain_of(0), ConfigError);
    EXPECT_THROW(chain_of(2, 1), ConfigError);
    EXPECT_THROW(FactorChain(2, 3, 2, {0.0}, {1.0, 1.0}), DimensionError);
}

TEST(Selector, ExtractsFirstAndLastFrame) {
    const auto c = chain_of(1, 4, 3);
    const Tensor chunk = Tensor::vector({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}).reshaped({12, 1});
    ad::Tape tape;
    const Tensor a = ad::matmul(tape.constant(c.A().matrix()), tape.constant(chunk)).value();
    const Tensor b = ad::matmul(tape.constant(c.B().matrix()), tape.constant(chunk)).value();
    EXPECT_EQ(a, Tensor::matrix({{1}, {2}, {3}}));
    EXPECT_EQ(b, Tensor::matrix({{10}, {11}, {12}}));
    // A A^T = I on frame space
    for (const auto& s : {c.A(), c.B()}) {
        const Tensor m = s.matrix();
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                double dot = 0.0;
                for (std::size_t k = 0; k < 12; ++k) dot += m.at(i, k) * m.at(j, k);
                EXPECT_EQ(dot, i == j ? 1.0 : 0.0);
            }
    }
}

TEST(SplitNoise, SingleChunk) {
    Rng rng(1);
    const Tensor x = split_noise(chain_of(1), rng);
    EXPECT_EQ(x.shape(), (ad::Shape{1, 3, 2}));
    Rng again(1);
    const auto ref = again.normal_vector(6);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(x[k], ref[k]);
}

TEST(SplitNoise, SharedFramesBitEqual) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const auto c = chain_of(2 + seed % 4, 3 + seed % 3);
        const Tensor x = split_noise(c, rng);
        const auto r = boundary_residuals(x, c);
        ASSERT_EQ(r.transition_errs.size(), c.n - 1);
        for (double e : r.transition_errs) EXPECT_EQ(e, 0.0);
        for (std::size_t i = 0; i + 1 < c.n; ++i)
            for (std::size_t k = 0; k < c.d; ++k) EXPECT_EQ(x[c.last_row(i) * c.d + k], x[c.first_row(i + 1) * c.d + k]);
    }
}

TEST(Merge, AveragesSharedFrame) {
    Tensor chunks(ad::Shape{2, 3, 1});
    chunks[0] = 5;
    chunks[1] = 6;
    chunks[2] = 0;  // chunk 1 last frame
    chunks[3] = 2;  // chunk 2 first frame
    chunks[4] = 7;
    chunks[5] = 8;
    const Tensor plan = merge(chunks);
    EXPECT_EQ(plan, Tensor::vector({5, 6, 1, 7, 8}).reshaped({5, 1}));
}

TEST(Merge, SingleChunkIsIdentity) {
    const Tensor chunk = Tensor::vector({1, 2, 3, 4, 5, 6}).reshaped({1, 3, 2});
    EXPECT_EQ(merge(chunk), chunk.reshaped({3, 2}));
    EXPECT_THROW(merge(Tensor(ad::Shape{6})), DimensionError);
}

TEST(Merge, SplitThenMergeIsIdentity) {
    Rng rng(7);
    for (std::size_t n = 1; n < 6; ++n) {
        const auto c = chain_of(n, 4, 3);
        Tensor plan(ad::Shape{c.m(), c.d});
        for (auto& v : plan.data()) v = rng.normal();
        EXPECT_EQ(merge(split_plan(c, plan)), plan);
    }
    EXPECT_THROW(split_plan(chain_of(2), Tensor(ad::Shape{4, 2})), DimensionError);
}

TEST(BoundaryResiduals, ScalarStart) {
    const FactorChain c(1, 3, 1, {0.0}, {1.0});
    const Tensor x = Tensor::vector({0.3, 0.5, 1.0}).reshaped({1, 3, 1});
    const auto r = boundary_residuals(x, c);
    EXPECT_DOUBLE_EQ(r.start_err, 0.3);
    EXPECT_EQ(r.goal_err, 0.0);
    EXPECT_TRUE(r.transition_errs.empty());
    EXPECT_DOUBLE_EQ(r.max_residual(), 0.3);
}

TEST(BoundaryResiduals, ConsistentAnchoredChainIsZero) {
    const auto c = chain_of(3);
    Tensor plan(ad::Shape{c.m(), 2});
    for (std::size_t f = 0; f < c.m(); ++f) plan[f * 2] = plan[f * 2 + 1] = static_cast<double>(f) / (c.m() - 1);
    const auto r = boundary_residuals(split_plan(c, plan), c);
    EXPECT_EQ(r.max_residual(), 0.0);
}

TEST(BoundaryResiduals, MatchesBruteForce) {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.below(5), F = 2 + rng.below(4), d = 1 + rng.below(3);
        const FactorChain c(n, F, d, rng.normal_vector(d), rng.normal_vector(d));
        Tensor x(c.chunk_shape());
        for (auto& v : x.data()) v = rng.normal();
        const auto r = boundary_residuals(x, c);
        auto frame = [&](std::size_t i, std::size_t f) {
            std::vector<double> out(d);
            for (std::size_t k = 0; k < d; ++k) out[k] = x.data()[(i * F + f) * d + k];
            return out;
        };
        auto dist = [&](const std::vector<double>& a, const std::vector<double>& b) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
            return std::sqrt(s);
        };
        EXPECT_DOUBLE_EQ(r.start_err, dist(frame(0, 0), c.start));
        EXPECT_DOUBLE_EQ(r.goal_err, dist(frame(n - 1, F - 1), c.goal));
        ASSERT_EQ(r.transition_errs.size(), n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i)
            EXPECT_DOUBLE_EQ(r.transition_errs[i], dist(frame(i, F - 1), frame(i + 1, 0)));
    }
    EXPECT_THROW(boundary_residuals(Tensor(ad::Shape{5}), chain_of(1)), DimensionError);
}
