#include "pico/diagnostics.hpp"

#include <cmath>
#include <numeric>

#include "pico/calibration.hpp"

namespace pico {

double overlap_score(const Matrix& m1, const Matrix& m2, Side side, int r, double rank_tol) {
    if (r <= 0)
        throw ValidationError("overlap rank r must be positive");
    const Eigen::Index dim1 = side == Side::Columns ? m1.rows() : m1.cols();
    const Eigen::Index dim2 = side == Side::Columns ? m2.rows() : m2.cols();
    if (dim1 != dim2)
        throw ValidationError("overlap: ambient dimensions differ (" + std::to_string(dim1) + " vs " +
                              std::to_string(dim2) + ")");
    const Matrix q1 = orthonormal_basis(m1, side, rank_tol);
    const Matrix q2 = orthonormal_basis(m2, side, rank_tol);
    return (q1.transpose() * q2).squaredNorm() / r;
}

double effective_rank(std::span<const double> sigma) {
    double total = 0.0;
    for (double s : sigma) {
        if (!(s >= 0.0))
            throw ValidationError("effective rank needs non-negative singular values");
        total += s;
    }
    if (!(total > 0.0))
        throw ValidationError("effective rank of an all-zero spectrum is undefined");
    double entropy = 0.0;
    for (double s : sigma) {
        if (s > 0.0) {
            const double p = s / total;
            entropy -= p * std::log(p);
        }
    }
    return std::exp(entropy);
}

double effective_rank(const Vector& sigma) {
    return effective_rank(std::span<const double>(sigma.data(), static_cast<std::size_t>(sigma.size())));
}

std::vector<double> component_energy(std::span<const double> coefficients) {
    double total = 0.0;
    for (double c : coefficients)
        total += c * c;
    if (!(total > 0.0))
        throw ValidationError("component energy of an all-zero decomposition is undefined");
    std::vector<double> out;
    out.reserve(coefficients.size());
    for (double c : coefficients)
        out.push_back(c * c / total);
    return out;
}

SpectralStats spectral_stats_from_sigma(const Vector& sigma, double rank_tol) {
    const double energy = sigma.squaredNorm();
    if (!(energy > 0.0))
        throw ValidationError("spectral statistics of a zero matrix are undefined");
    SpectralStats out;
    const double top = sigma.maxCoeff();
    out.components = static_cast<int>(sigma.size());
    out.frobenius = std::sqrt(energy);
    out.o_max = top * top / energy;
    out.effective_rank = effective_rank(sigma);
    out.stable_rank = energy / (top * top);
    out.numerical_rank = numerical_rank(sigma, rank_tol);
    if (out.numerical_rank == out.components)
        out.condition_number = top / sigma.minCoeff();
    return out;
}

SpectralStats spectral_stats(const Matrix& m, double rank_tol) {
    return spectral_stats_from_sigma(thin_svd(m).sigma, rank_tol);
}

SpectralStats merged_b_stats(const Matrix& delta, double rank_tol) {
    const auto svd = thin_svd(delta);
    const int k = numerical_rank(svd.sigma, rank_tol);
    if (k == 0)
        throw ValidationError("spectral statistics of a zero matrix are undefined");
    return spectral_stats_from_sigma(svd.sigma.head(k), rank_tol);
}

namespace {

struct Accumulator {
    double sum_b = 0.0;
    double sum_a = 0.0;
    int greater = 0;
    int count = 0;

    void add(double o_b, double o_a) {
        sum_b += o_b;
        sum_a += o_a;
        greater += o_b > o_a ? 1 : 0;
        ++count;
    }

    OverlapSummary summary() const {
        OverlapSummary out;
        out.pair_count = count;
        if (count == 0) return out;
        out.mean_o_b = sum_b / count;
        out.mean_o_a = sum_a / count;
        out.gap = out.mean_o_b - out.mean_o_a;
        out.frac_b_gt_a = static_cast<double>(greater) / count;
        return out;
    }
};

}  // namespace

OverlapReport pairwise_overlap(const AdapterSet& set, double rank_tol) {
    const int task_count = set.task_count();
    if (task_count < 2)
        throw ValidationError("pairwise overlap needs at least two adapters");
    OverlapReport report;
    report.rank = set.rank();
    for (const auto& adapter : set.adapters())
        report.task_ids.push_back(adapter.task_id());

    Accumulator pooled;
    std::map<std::string, Accumulator> per_module;
    for (const auto& key : set.keys()) {
        const auto factors = set.factors_at(key);
        std::vector<Matrix> q_b;
        std::vector<Matrix> q_a;
        LayerOverlap layer;
        for (const auto* pair : factors) {
            q_b.push_back(orthonormal_basis(pair->b(), Side::Columns, rank_tol));
            q_a.push_back(orthonormal_basis(pair->a(), Side::Rows, rank_tol));
            layer.rank_b.push_back(static_cast<int>(q_b.back().cols()));
            layer.rank_a.push_back(static_cast<int>(q_a.back().cols()));
        }
        layer.o_b = Matrix::Zero(task_count, task_count);
        layer.o_a = Matrix::Zero(task_count, task_count);
        for (int i = 0; i < task_count; ++i) {
            for (int j = i; j < task_count; ++j) {
                const double o_b = (q_b[i].transpose() * q_b[j]).squaredNorm() / report.rank;
                const double o_a = (q_a[i].transpose() * q_a[j]).squaredNorm() / report.rank;
                layer.o_b(i, j) = layer.o_b(j, i) = o_b;
                layer.o_a(i, j) = layer.o_a(j, i) = o_a;
                if (i < j) {
                    pooled.add(o_b, o_a);
                    per_module[key.module_name].add(o_b, o_a);
                }
            }
        }
        report.layers.emplace(key, std::move(layer));
    }
    report.pooled = pooled.summary();
    for (const auto& [module, acc] : per_module)
        report.per_module.emplace(module, acc.summary());
    return report;
}

TaskContributionProfile task_contributions(const AdapterSet& set, const LayerKey& key, int top_k) {
    const auto factors = set.factors_at(key);
    const SharedBasis basis = build_shared_basis(factors, CalibrationSpace::BSpace);
    if (top_k < 1 || top_k > basis.m())
        throw ValidationError("top_k must lie in [1, " + std::to_string(basis.m()) + "]");

    TaskContributionProfile out;
    out.key = key;
    for (const auto& adapter : set.adapters())
        out.task_ids.push_back(adapter.task_id());

    const auto task_count = factors.size();
    for (int j = 0; j < top_k; ++j) {
        std::vector<double> share(task_count);
        double total = 0.0;
        for (std::size_t t = 0; t < task_count; ++t) {
            share[t] = (basis.u.col(j).transpose() * factors[t]->b()).squaredNorm();
            total += share[t];
        }
        for (double& value : share)
            value = total > 0.0 ? value / total : 1.0 / static_cast<double>(task_count);
        out.contributions.push_back(std::move(share));
    }

    out.energy = component_energy(std::span<const double>(basis.sigma.data(), basis.sigma.size()));
    out.cumulative.resize(out.energy.size());
    std::partial_sum(out.energy.begin(), out.energy.end(), out.cumulative.begin());
    return out;
}

}  // namespace pico
