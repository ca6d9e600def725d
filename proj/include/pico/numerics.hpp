#pragma once

#include <random>

#include "pico/core.hpp"

namespace pico {

inline constexpr double kDefaultRankTol = 1e-8;

// Thin singular system of a d x n matrix, m = min(d, n).
//
// Each left singular vector is signed so that its largest-magnitude entry is
// positive (first such entry on ties); the matching right vector flips with it.
struct SingularSystem {
    Matrix u;      // d x m
    Vector sigma;  // m, non-increasing
    Matrix v;      // n x m
};

enum class Side { Columns, Rows };

// Throws NumericalError naming the first non-finite entry.
void require_finite(const Matrix& m, const std::string& what = "matrix");

SingularSystem thin_svd(const Matrix& m);

// Number of singular values strictly above rank_tol * sigma_max (0 for a zero spectrum).
int numerical_rank(const Vector& sigma, double rank_tol = kDefaultRankTol);

// Orthonormal basis of the column space (left singular vectors) or the row
// space (right singular vectors) of m, truncated at rank_tol * sigma_max.
Matrix orthonormal_basis(const Matrix& m, Side side, double rank_tol = kDefaultRankTol);

double frobenius_norm(const Matrix& m);

// Best rank-k approximation U_k diag(sigma_k) V_k^T.
Matrix truncate(const SingularSystem& svd, int k);

// Haar-distributed d x k matrix with orthonormal columns (QR of a Gaussian
// matrix, R diagonal made positive).
Matrix random_orthonormal(Eigen::Index d, Eigen::Index k, std::mt19937_64& rng);

Matrix random_gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng);

}  // namespace pico
