#include "pico/calibration.hpp"

namespace pico {

namespace {

Matrix stack(std::span<const LoraFactorPair* const> factors, CalibrationSpace space) {
    const auto count = static_cast<Eigen::Index>(factors.size());
    const LoraFactorPair& first = *factors.front();
    const Eigen::Index r = first.rank();
    switch (space) {
    case CalibrationSpace::BSpace: {
        Matrix out(first.d_out(), count * r);
        for (Eigen::Index t = 0; t < count; ++t)
            out.middleCols(t * r, r) = factors[t]->b();
        return out;
    }
    case CalibrationSpace::ASpace: {
        Matrix out(count * r, first.d_in());
        for (Eigen::Index t = 0; t < count; ++t)
            out.middleRows(t * r, r) = factors[t]->a();
        return out;
    }
    case CalibrationSpace::DeltaSpace: {
        const Eigen::Index d_in = first.d_in();
        Matrix out(first.d_out(), count * d_in);
        for (Eigen::Index t = 0; t < count; ++t)
            out.middleCols(t * d_in, d_in) = factors[t]->delta();
        return out;
    }
    case CalibrationSpace::None: break;
    }
    throw ValidationError("no shared basis for calibration space 'none'");
}

}  // namespace

SharedBasis build_shared_basis(std::span<const LoraFactorPair* const> factors, CalibrationSpace space) {
    if (factors.empty())
        throw ValidationError("shared basis needs at least one task");
    auto svd = thin_svd(stack(factors, space));
    SharedBasis basis;
    basis.space = space;
    basis.sigma = std::move(svd.sigma);
    basis.u = space == CalibrationSpace::ASpace ? std::move(svd.v) : std::move(svd.u);
    return basis;
}

SharedBasis build_shared_basis(const AdapterSet& set, const LayerKey& key, CalibrationSpace space) {
    const auto factors = set.factors_at(key);
    return build_shared_basis(factors, space);
}

CalibrationProfile sharing_profile(const SharedBasis& basis, int task_count) {
    if (task_count < 1)
        throw ValidationError("task count must be at least 1");
    const double total = basis.sigma.squaredNorm();
    if (!(total > 0.0))
        throw NumericalError("empty adapter at layer: joint spectrum is all zero");
    CalibrationProfile profile;
    profile.task_count = task_count;
    profile.s = basis.sigma.array().square() / total;
    profile.alpha = (1.0 + (task_count - 1) * profile.s.array()).inverse();
    return profile;
}

Matrix calibrate_factor(const SharedBasis& basis, const CalibrationProfile& profile, const Matrix& factor) {
    if (profile.alpha.size() != basis.m())
        throw ValidationError("calibration profile length does not match basis");
    const Vector shrink = profile.alpha.array() - 1.0;
    if (basis.space == CalibrationSpace::ASpace) {
        if (factor.cols() != basis.u.rows())
            throw ValidationError("a-space calibration: factor has " + std::to_string(factor.cols()) +
                                  " columns, basis dimension is " + std::to_string(basis.u.rows()));
        return factor + ((factor * basis.u) * shrink.asDiagonal()) * basis.u.transpose();
    }
    if (factor.rows() != basis.u.rows())
        throw ValidationError("calibration: factor has " + std::to_string(factor.rows()) +
                              " rows, basis dimension is " + std::to_string(basis.u.rows()));
    return factor + basis.u * (shrink.asDiagonal() * (basis.u.transpose() * factor));
}

LayerCalibration calibrate_layer(std::span<const LoraFactorPair* const> factors, CalibrationSpace space) {
    LayerCalibration out;
    out.tasks.reserve(factors.size());
    const int task_count = static_cast<int>(factors.size());

    auto pass_through = [&] {
        for (const auto* pair : factors)
            out.tasks.push_back({pair->delta(), *pair});
    };

    if (space == CalibrationSpace::None) {
        pass_through();
        return out;
    }

    const SharedBasis basis = build_shared_basis(factors, space);
    out.report.sigma = basis.sigma;
    if (!(basis.sigma.squaredNorm() > 0.0)) {
        out.report.degenerate = true;
        out.report.s = Vector::Zero(basis.m());
        out.report.alpha = Vector::Ones(basis.m());
        pass_through();
        return out;
    }
    const CalibrationProfile profile = sharing_profile(basis, task_count);
    out.report.s = profile.s;
    out.report.alpha = profile.alpha;

    double before = 0.0;
    double after = 0.0;
    for (const auto* pair : factors) {
        const Matrix source = pair->delta();
        before += source.squaredNorm();
        CalibratedTask task;
        switch (space) {
        case CalibrationSpace::BSpace: {
            LoraFactorPair calibrated(pair->a(), calibrate_factor(basis, profile, pair->b()));
            task.delta = calibrated.delta();
            task.factors = std::move(calibrated);
            break;
        }
        case CalibrationSpace::ASpace: {
            LoraFactorPair calibrated(calibrate_factor(basis, profile, pair->a()), pair->b());
            task.delta = calibrated.delta();
            task.factors = std::move(calibrated);
            break;
        }
        case CalibrationSpace::DeltaSpace:
            task.delta = calibrate_factor(basis, profile, source);
            break;
        case CalibrationSpace::None: break;
        }
        after += task.delta.squaredNorm();
        out.tasks.push_back(std::move(task));
    }
    out.report.energy_removed = before > 0.0 ? 1.0 - after / before : 0.0;
    return out;
}

std::map<LayerKey, LayerCalibration> calibrate_set(const AdapterSet& set, CalibrationSpace space) {
    std::map<LayerKey, LayerCalibration> out;
    for (const auto& key : set.keys()) {
        const auto factors = set.factors_at(key);
        out.emplace(key, calibrate_layer(factors, space));
    }
    return out;
}

}  // namespace pico
