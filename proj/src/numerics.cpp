#include "pico/numerics.hpp"

#include <cmath>
#include <sstream>

namespace pico {

void require_finite(const Matrix& m, const std::string& what) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            if (!std::isfinite(m(i, j))) {
                std::ostringstream msg;
                msg << what << " has non-finite entry " << m(i, j) << " at (" << i << ", " << j << ")";
                throw NumericalError(msg.str());
            }
        }
    }
}

namespace {

void fix_signs(SingularSystem& svd) {
    for (Eigen::Index j = 0; j < svd.u.cols(); ++j) {
        Eigen::Index best = 0;
        double best_abs = -1.0;
        for (Eigen::Index i = 0; i < svd.u.rows(); ++i) {
            // strict comparison keeps the first index on ties
            if (std::abs(svd.u(i, j)) > best_abs) {
                best_abs = std::abs(svd.u(i, j));
                best = i;
            }
        }
        if (svd.u(best, j) < 0.0) {
            svd.u.col(j) *= -1.0;
            svd.v.col(j) *= -1.0;
        }
    }
}

}  // namespace

SingularSystem thin_svd(const Matrix& m) {
    require_finite(m);
    SingularSystem out;
    const Eigen::Index k = std::min(m.rows(), m.cols());
    if (k == 0) {
        out.u = Matrix(m.rows(), 0);
        out.sigma = Vector(0);
        out.v = Matrix(m.cols(), 0);
        return out;
    }
    // Jacobi is slow on large inputs; divide-and-conquer keeps full accuracy there.
    if (k <= 64) {
        Eigen::JacobiSVD<Matrix, Eigen::ColPivHouseholderQRPreconditioner> svd(
            m, Eigen::ComputeThinU | Eigen::ComputeThinV);
        out.u = svd.matrixU();
        out.sigma = svd.singularValues();
        out.v = svd.matrixV();
    } else {
        Eigen::BDCSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
        out.u = svd.matrixU();
        out.sigma = svd.singularValues();
        out.v = svd.matrixV();
    }
    fix_signs(out);
    return out;
}

int numerical_rank(const Vector& sigma, double rank_tol) {
    if (sigma.size() == 0) return 0;
    const double cutoff = rank_tol * sigma.maxCoeff();
    if (!(sigma.maxCoeff() > 0.0)) return 0;
    int count = 0;
    for (Eigen::Index j = 0; j < sigma.size(); ++j)
        if (sigma(j) > cutoff) ++count;
    return count;
}

Matrix orthonormal_basis(const Matrix& m, Side side, double rank_tol) {
    if (rank_tol < 0.0)
        throw ValidationError("rank_tol must be non-negative");
    const auto svd = thin_svd(m);
    const int k = numerical_rank(svd.sigma, rank_tol);
    return side == Side::Columns ? Matrix(svd.u.leftCols(k)) : Matrix(svd.v.leftCols(k));
}

double frobenius_norm(const Matrix& m) {
    return m.norm();
}

Matrix truncate(const SingularSystem& svd, int k) {
    k = std::min<int>(k, static_cast<int>(svd.sigma.size()));
    return svd.u.leftCols(k) * svd.sigma.head(k).asDiagonal() * svd.v.leftCols(k).transpose();
}

Matrix random_gaussian(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix out(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            out(i, j) = normal(rng);
    return out;
}

Matrix random_orthonormal(Eigen::Index d, Eigen::Index k, std::mt19937_64& rng) {
    if (k > d)
        throw ValidationError("cannot draw " + std::to_string(k) + " orthonormal vectors in dimension " +
                              std::to_string(d));
    const Matrix g = random_gaussian(d, k, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(d, k);
    const Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < k; ++j)
        if (r(j, j) < 0.0) q.col(j) *= -1.0;
    return q;
}

}  // namespace pico
