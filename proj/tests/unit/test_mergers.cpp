#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "pico/mergers.hpp"
#include "pico/numerics.hpp"
#include "support/oracles.hpp"

using namespace pico;

namespace {

Matrix row(std::initializer_list<double> values) {
    Matrix m(1, static_cast<Eigen::Index>(values.size()));
    Eigen::Index j = 0;
    for (double v : values)
        m(0, j++) = v;
    return m;
}

std::vector<Matrix> random_updates(int count, int rows, int cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Matrix> out;
    for (int t = 0; t < count; ++t)
        out.push_back(oracle::gaussian(rows, cols, rng));
    return out;
}

}  // namespace

TEST(TaskArithmetic, AveragingIdentityAndCancellation) {
    const auto u = random_updates(1, 4, 3, 1).front();
    const std::vector<Matrix> same(4, u);
    EXPECT_LT((merge_task_arithmetic(same, 0.25) - u).norm(), 1e-14);
    const std::vector<Matrix> opposite{u, -u};
    EXPECT_EQ(merge_task_arithmetic(opposite, 3.7).norm(), 0.0);
    EXPECT_THROW(merge_task_arithmetic(std::vector<Matrix>{}, 1.0), ValidationError);
    EXPECT_THROW(merge_task_arithmetic(std::vector<Matrix>{u, Matrix::Ones(2, 2)}, 1.0), ValidationError);
}

TEST(TaskArithmetic, LinearInLambda) {
    const auto updates = random_updates(5, 6, 4, 2);
    const Matrix want = 0.7 * 5 * merge_task_arithmetic(updates, 1.0 / 5);
    EXPECT_LT((merge_task_arithmetic(updates, 0.7) - want).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ties, HandCase) {
    // coordinate 1: 3 + 2 > 0, mean(3, 2) = 2.5; coordinate 2: -1 + 2 > 0, only 2 agrees
    const std::vector<Matrix> updates{row({3, -1}), row({2, 2})};
    EXPECT_EQ(merge_ties(updates, 1.0, 1.0), row({2.5, 2}));
}

TEST(Ties, SignTieGivesZero) {
    const std::vector<Matrix> updates{row({1}), row({-1})};
    EXPECT_EQ(merge_ties(updates, 1.0, 1.0), row({0}));
}

TEST(Ties, IdenticalUpdatesAreFixedPoints) {
    const auto u = random_updates(1, 5, 5, 3).front();
    const std::vector<Matrix> same(3, u);
    EXPECT_LT((merge_ties(same, 1.0, 1.0) - u).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Ties, TrimKeepsTopMagnitudes) {
    // density 0.5 of 4 entries keeps 2 per task
    const std::vector<Matrix> updates{row({4, -0.1, 3, 0.2})};
    EXPECT_EQ(merge_ties(updates, 0.5, 1.0), row({4, 0, 3, 0}));
    // ceil(0.3 * 4) = 2
    EXPECT_EQ(merge_ties(updates, 0.3, 2.0), row({8, 0, 6, 0}));
}

TEST(Ties, SameSignInputsReduceToScaledMean) {
    auto updates = random_updates(4, 6, 5, 4);
    for (auto& u : updates)
        u = u.cwiseAbs();
    const Matrix mean = merge_task_arithmetic(updates, 0.25);
    EXPECT_LT((merge_ties(updates, 1.0, 1.5) - 1.5 * mean).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Ties, Errors) {
    const std::vector<Matrix> updates{row({1})};
    EXPECT_THROW(merge_ties(updates, 0.0, 1.0), ValidationError);
    EXPECT_THROW(merge_ties(std::vector<Matrix>{}, 0.5, 1.0), ValidationError);
}

TEST(Tsv, SingleTaskIsTruncatedSvd) {
    const auto u = random_updates(1, 10, 8, 5);
    for (int k : {1, 3, 8}) {
        const Matrix got = merge_tsv(u, k);
        EXPECT_NEAR((got - u[0]).norm(), oracle::truncation_error(u[0], k), 1e-9);
        EXPECT_LT((got - truncate(thin_svd(u[0]), k)).norm(), 1e-9);
    }
}

TEST(Tsv, BlockOrthogonalInputsSum) {
    std::mt19937_64 rng(6);
    const int T = 3, k = 2;
    const Matrix uu = random_orthonormal(12, T * k, rng);
    const Matrix vv = random_orthonormal(10, T * k, rng);
    std::vector<Matrix> updates;
    Matrix want = Matrix::Zero(12, 10);
    for (int t = 0; t < T; ++t) {
        Vector s(k);
        s << 3.0 + t, 1.0 + 0.5 * t;
        // a small tail in a direction shared with nothing else gets truncated away
        Matrix dw = uu.middleCols(t * k, k) * s.asDiagonal() * vv.middleCols(t * k, k).transpose();
        want += dw;
        updates.push_back(dw);
    }
    EXPECT_LT((merge_tsv(updates, k) - want).norm(), 1e-8);
}

TEST(Tsv, RankAndNormBounds) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto updates = random_updates(3, 14, 11, 100 + seed);
        const int k = 2;
        const Matrix merged = merge_tsv(updates, k);
        EXPECT_LE(numerical_rank(thin_svd(merged).sigma, 1e-10), 3 * k);
        double bound = 0.0;
        for (const auto& u : updates)
            bound += truncate(thin_svd(u), k).norm();
        EXPECT_LE(merged.norm(), bound + 1e-10);
    }
    const auto updates = random_updates(2, 4, 3, 7);
    EXPECT_THROW(merge_tsv(updates, 4), ValidationError);
    EXPECT_THROW(merge_tsv(updates, 0), ValidationError);
}

TEST(PolarFactor, OrthonormalInputIsFixedPoint) {
    std::mt19937_64 rng(8);
    const Matrix q = random_orthonormal(9, 4, rng);
    EXPECT_LT((polar_factor(q) - q).norm(), 1e-12);
    const Matrix p = polar_factor(oracle::gaussian(9, 4, rng));
    EXPECT_LT((p.transpose() * p - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Mergers, PermutationInvariant) {
    auto updates = random_updates(4, 6, 6, 9);
    auto reversed = updates;
    std::reverse(reversed.begin(), reversed.end());
    EXPECT_LT((merge_task_arithmetic(updates, 0.25) - merge_task_arithmetic(reversed, 0.25)).norm(), 1e-12);
    EXPECT_LT((merge_ties(updates, 0.4, 1.0) - merge_ties(reversed, 0.4, 1.0)).norm(), 1e-12);
    EXPECT_LT((merge_tsv(updates, 1) - merge_tsv(reversed, 1)).norm(), 1e-9);
}

TEST(Dare, ZeroRateIsIdentityAndSeedDeterministic) {
    const auto u = random_updates(1, 8, 8, 10).front();
    EXPECT_EQ(dare_preprocess(u, 0.0, 1), u);
    EXPECT_EQ(dare_preprocess(u, 0.3, 99), dare_preprocess(u, 0.3, 99));
    EXPECT_NE(dare_preprocess(u, 0.3, 99), dare_preprocess(u, 0.3, 100));
    EXPECT_THROW(dare_preprocess(u, 1.0, 1), ValidationError);
    EXPECT_THROW(dare_preprocess(u, -0.1, 1), ValidationError);
}

TEST(Dare, SurvivorsAreRescaled) {
    const Matrix ones = Matrix::Ones(20, 20);
    const Matrix out = dare_preprocess(ones, 0.75, 3);
    for (Eigen::Index i = 0; i < out.size(); ++i)
        EXPECT_TRUE(out.data()[i] == 0.0 || out.data()[i] == 4.0);
}

TEST(Dare, UnbiasedInExpectation) {
    // entrywise mean over 2000 draws of a 10x10 all-ones matrix; each entry is
    // a mean of Bernoulli(0.5) * 2 with std 1 / sqrt(2000)
    const Matrix ones = Matrix::Ones(10, 10);
    Matrix sum = Matrix::Zero(10, 10);
    const int draws = 2000;
    for (int s = 0; s < draws; ++s)
        sum += dare_preprocess(ones, 0.5, static_cast<std::uint64_t>(s));
    const Matrix mean = sum / draws;
    const double sigma = 1.0 / std::sqrt(static_cast<double>(draws));
    EXPECT_LT((mean.array() - 1.0).abs().maxCoeff(), 5.0 * sigma);
    EXPECT_NEAR(mean.mean(), 1.0, 3.0 * sigma / 10.0);
}

TEST(Dare, SeedKeyedByTaskId) {
    const LayerKey key{3, "q_proj"};
    EXPECT_EQ(dare_seed(1, "math", key), dare_seed(1, "math", key));
    EXPECT_NE(dare_seed(1, "math", key), dare_seed(1, "code", key));
    EXPECT_NE(dare_seed(1, "math", key), dare_seed(2, "math", key));
    EXPECT_NE(dare_seed(1, "math", key), dare_seed(1, "math", LayerKey{3, "v_proj"}));
}
