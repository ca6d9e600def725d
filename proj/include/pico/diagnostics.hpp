#pragma once

#include <limits>
#include <span>

#include "pico/core.hpp"
#include "pico/numerics.hpp"

namespace pico {

/// Normalized subspace overlap (1/r) * ||Q1^T Q2||_F^2 between the column
/// spaces (Side::Columns) or row spaces (Side::Rows) of two matrices.
///
/// The divisor is the nominal adapter rank, so the self-overlap of a
/// rank-deficient factor is numerical_rank / r rather than 1.
double overlap_score(const Matrix& m1, const Matrix& m2, Side side, int r, double rank_tol = kDefaultRankTol);

/// exp of the Shannon entropy of p_k = sigma_k / sum sigma (natural log, 0 log 0 = 0).
double effective_rank(std::span<const double> sigma);
double effective_rank(const Vector& sigma);

/// e_j = c_j^2 / sum c_k^2.
std::vector<double> component_energy(std::span<const double> coefficients);

struct SpectralStats {
    double frobenius = 0.0;
    double o_max = 0.0;
    double effective_rank = 0.0;
    double stable_rank = 0.0;
    double condition_number = std::numeric_limits<double>::infinity();
    int numerical_rank = 0;
    int components = 0;  // m = min(rows, cols)
};

SpectralStats spectral_stats_from_sigma(const Vector& sigma, double rank_tol = kDefaultRankTol);
SpectralStats spectral_stats(const Matrix& m, double rank_tol = kDefaultRankTol);

/// Statistics of the output-side factor of a dense update: the update is
/// refactored as U_k diag(sigma_k) at its numerical rank k, so the condition
/// number is finite whenever the update is nonzero.
SpectralStats merged_b_stats(const Matrix& delta, double rank_tol = kDefaultRankTol);

struct OverlapSummary {
    double mean_o_b = 0.0;
    double mean_o_a = 0.0;
    double gap = 0.0;
    double frac_b_gt_a = 0.0;  // strict inequality
    int pair_count = 0;
};

struct LayerOverlap {
    Matrix o_b;  // T x T, diagonal = self overlap
    Matrix o_a;
    std::vector<int> rank_b;  // numerical rank of each task's B
    std::vector<int> rank_a;
};

struct OverlapReport {
    std::vector<std::string> task_ids;
    int rank = 0;
    std::map<LayerKey, LayerOverlap> layers;
    OverlapSummary pooled;
    std::map<std::string, OverlapSummary> per_module;
};

/// Requires T >= 2. Summaries average over layers and unordered pairs i < j.
OverlapReport pairwise_overlap(const AdapterSet& set, double rank_tol = kDefaultRankTol);

struct TaskContributionProfile {
    LayerKey key;
    std::vector<std::string> task_ids;
    /// contributions[j][t]: share of component j's energy coming from task t,
    /// ||u_j^T B_t||^2 normalized over tasks.
    std::vector<std::vector<double>> contributions;
    std::vector<double> energy;      // e_j over all m components
    std::vector<double> cumulative;  // running sum of energy, ends at 1
    static constexpr const char* normalization = "per-component task energy share";
};

TaskContributionProfile task_contributions(const AdapterSet& set, const LayerKey& key, int top_k);

}  // namespace pico
