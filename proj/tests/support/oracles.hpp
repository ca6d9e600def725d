#pragma once

// Reference computations used only by the tests. None of these go through
// pico::thin_svd; they rebuild each quantity from a different route
// (projectors, symmetric eigendecompositions, explicit enumeration).

#include <algorithm>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "pico/core.hpp"

namespace pico::oracle {

inline Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal;
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
        m.data()[i] = normal(rng);
    return m;
}

// Orthogonal projector onto the column space of a full-column-rank matrix.
inline Matrix column_projector(const Matrix& m) {
    return m * (m.transpose() * m).ldlt().solve(m.transpose());
}

// (1/r) trace(P1 P2) == (1/r) ||Q1^T Q2||_F^2 for full-rank inputs.
inline double projector_overlap(const Matrix& m1, const Matrix& m2, int r) {
    return (column_projector(m1) * column_projector(m2)).trace() / r;
}

// Singular values from the eigenvalues of the smaller Gram matrix, descending.
inline std::vector<double> gram_singular_values(const Matrix& m) {
    const Matrix gram = m.rows() <= m.cols() ? Matrix(m * m.transpose()) : Matrix(m.transpose() * m);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    std::vector<double> out;
    for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i)
        out.push_back(std::sqrt(std::max(0.0, eig.eigenvalues()(i))));
    std::sort(out.rbegin(), out.rend());
    return out;
}

// Dense calibration operator I + U diag(alpha - 1) U^T built from the
// eigendecomposition of stack * stack^T.
inline Matrix dense_operator(const Matrix& stack, int task_count) {
    const Matrix gram = stack * stack.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    const Vector lambda = eig.eigenvalues().cwiseMax(0.0);
    const double total = lambda.sum();
    const Vector alpha = (1.0 + (task_count - 1) * (lambda.array() / total)).inverse();
    const Matrix& u = eig.eigenvectors();
    return u * alpha.asDiagonal() * u.transpose();
}

// Frobenius error of the best rank-k approximation: sqrt of the tail energy.
inline double truncation_error(const Matrix& m, int k) {
    const auto sigma = gram_singular_values(m);
    double tail = 0.0;
    for (std::size_t i = static_cast<std::size_t>(k); i < sigma.size(); ++i)
        tail += sigma[i] * sigma[i];
    return std::sqrt(tail);
}

inline double rel_error(const Matrix& got, const Matrix& want) {
    const double scale = want.norm();
    return scale > 0.0 ? (got - want).norm() / scale : got.norm();
}

}  // namespace pico::oracle
