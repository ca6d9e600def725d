#pragma once

#include <optional>
#include <span>

#include "pico/core.hpp"
#include "pico/numerics.hpp"

namespace pico {

// Joint singular basis of one layer across all tasks.
//
//   b-space:     left singular vectors of [B_1 ... B_T]       (d_out x m)
//   a-space:     right singular vectors of [A_1; ...; A_T]    (d_in x m)
//   delta-space: left singular vectors of [dW_1 ... dW_T]     (d_out x m)
struct SharedBasis {
    Matrix u;
    Vector sigma;
    CalibrationSpace space = CalibrationSpace::BSpace;

    Eigen::Index m() const { return sigma.size(); }
};

// s_j = sigma_j^2 / sum sigma_k^2,  alpha_j = 1 / (1 + (T - 1) s_j).
struct CalibrationProfile {
    Vector s;
    Vector alpha;
    int task_count = 1;
};

SharedBasis build_shared_basis(std::span<const LoraFactorPair* const> factors, CalibrationSpace space);
SharedBasis build_shared_basis(const AdapterSet& set, const LayerKey& key, CalibrationSpace space);

// Throws NumericalError ("empty adapter at layer") when sigma is all zero.
CalibrationProfile sharing_profile(const SharedBasis& basis, int task_count);

// S * factor with S = I + U diag(alpha - 1) U^T, applied in correction form.
// For an a-space basis the operator multiplies from the right: factor * S'.
Matrix calibrate_factor(const SharedBasis& basis, const CalibrationProfile& profile, const Matrix& factor);

struct CalibratedTask {
    Matrix delta;
    std::optional<LoraFactorPair> factors;  // absent for delta-space
};

struct LayerCalibrationReport {
    Vector sigma;
    Vector s;
    Vector alpha;
    double energy_removed = 0.0;  // 1 - sum ||dW~_t||^2 / sum ||dW_t||^2
    bool degenerate = false;      // all factors zero, passed through
};

struct LayerCalibration {
    std::vector<CalibratedTask> tasks;
    LayerCalibrationReport report;
};

// Calibrates one layer. CalibrationSpace::None returns the uncalibrated updates.
LayerCalibration calibrate_layer(std::span<const LoraFactorPair* const> factors, CalibrationSpace space);

std::map<LayerKey, LayerCalibration> calibrate_set(const AdapterSet& set, CalibrationSpace space);

}  // namespace pico
