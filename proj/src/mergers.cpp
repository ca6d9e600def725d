#include "pico/mergers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pico/numerics.hpp"

namespace pico {

namespace {

void require_same_shapes(std::span<const Matrix> updates, const char* who) {
    if (updates.empty())
        throw ValidationError(std::string(who) + ": no updates to merge");
    for (const auto& u : updates) {
        if (u.rows() != updates.front().rows() || u.cols() != updates.front().cols())
            throw ValidationError(std::string(who) + ": updates have different shapes");
    }
}

Matrix trim_top(const Matrix& update, double density) {
    const Eigen::Index n = update.size();
    const auto keep = static_cast<Eigen::Index>(std::ceil(density * static_cast<double>(n) - 1e-12));
    if (keep >= n) return update;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const double* data = update.data();
    // magnitude descending, lower index first on ties
    std::nth_element(order.begin(), order.begin() + keep, order.end(), [data](Eigen::Index x, Eigen::Index y) {
        const double ax = std::abs(data[x]);
        const double ay = std::abs(data[y]);
        return ax != ay ? ax > ay : x < y;
    });
    Matrix out = Matrix::Zero(update.rows(), update.cols());
    for (Eigen::Index i = 0; i < keep; ++i)
        out.data()[order[static_cast<std::size_t>(i)]] = data[order[static_cast<std::size_t>(i)]];
    return out;
}

}  // namespace

Matrix merge_task_arithmetic(std::span<const Matrix> updates, double lambda) {
    require_same_shapes(updates, "task arithmetic");
    if (!(lambda > 0.0))
        throw ValidationError("task arithmetic: lambda must be positive");
    Matrix sum = Matrix::Zero(updates.front().rows(), updates.front().cols());
    for (const auto& u : updates)
        sum += u;
    return lambda * sum;
}

Matrix merge_ties(std::span<const Matrix> updates, double density, double lambda) {
    require_same_shapes(updates, "ties");
    if (!(density > 0.0 && density <= 1.0))
        throw ValidationError("ties: density must lie in (0, 1]");
    if (!(lambda > 0.0))
        throw ValidationError("ties: lambda must be positive");

    std::vector<Matrix> trimmed;
    trimmed.reserve(updates.size());
    for (const auto& u : updates)
        trimmed.push_back(trim_top(u, density));

    const Eigen::Index n = updates.front().size();
    Matrix out = Matrix::Zero(updates.front().rows(), updates.front().cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        double total = 0.0;
        for (const auto& t : trimmed)
            total += t.data()[i];
        if (total == 0.0) continue;
        const bool positive = total > 0.0;
        double agree = 0.0;
        int count = 0;
        for (const auto& t : trimmed) {
            const double value = t.data()[i];
            if ((positive && value > 0.0) || (!positive && value < 0.0)) {
                agree += value;
                ++count;
            }
        }
        out.data()[i] = agree / count;
    }
    return lambda * out;
}

Matrix polar_factor(const Matrix& m) {
    const auto svd = thin_svd(m);
    return svd.u * svd.v.transpose();
}

Matrix merge_tsv(std::span<const Matrix> updates, int per_task_rank) {
    require_same_shapes(updates, "tsv-m");
    const Eigen::Index d_out = updates.front().rows();
    const Eigen::Index d_in = updates.front().cols();
    if (per_task_rank < 1 || per_task_rank > std::min(d_out, d_in))
        throw ValidationError("tsv-m: per-task rank " + std::to_string(per_task_rank) + " outside [1, " +
                              std::to_string(std::min(d_out, d_in)) + "]");

    const auto count = static_cast<Eigen::Index>(updates.size());
    const Eigen::Index k = per_task_rank;
    Matrix u_cat(d_out, count * k);
    Matrix v_cat(d_in, count * k);
    Vector sigma_cat(count * k);
    for (Eigen::Index t = 0; t < count; ++t) {
        const auto svd = thin_svd(updates[static_cast<std::size_t>(t)]);
        u_cat.middleCols(t * k, k) = svd.u.leftCols(k);
        v_cat.middleCols(t * k, k) = svd.v.leftCols(k);
        sigma_cat.segment(t * k, k) = svd.sigma.head(k);
    }
    const Matrix u_orth = polar_factor(u_cat);
    const Matrix v_orth = polar_factor(v_cat);
    return u_orth * sigma_cat.asDiagonal() * v_orth.transpose();
}

Matrix dare_preprocess(const Matrix& update, double drop_rate, std::uint64_t seed) {
    if (!(drop_rate >= 0.0 && drop_rate < 1.0))
        throw ValidationError("dare: drop rate must lie in [0, 1)");
    if (drop_rate == 0.0) return update;
    std::mt19937_64 rng(seed);
    const double keep_scale = 1.0 / (1.0 - drop_rate);
    Matrix out(update.rows(), update.cols());
    for (Eigen::Index i = 0; i < update.size(); ++i) {
        // 53-bit uniform in [0, 1), identical across standard libraries
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        out.data()[i] = u < drop_rate ? 0.0 : update.data()[i] * keep_scale;
    }
    return out;
}

std::uint64_t dare_seed(std::uint64_t base_seed, std::string_view task_id, const LayerKey& key) {
    // FNV-1a over "task/layer/module", mixed with the base seed
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](std::string_view text) {
        for (unsigned char c : text) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    };
    feed(task_id);
    feed("/");
    feed(std::to_string(key.layer_index));
    feed("/");
    feed(key.module_name);
    std::uint64_t z = h ^ (base_seed + 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace pico
