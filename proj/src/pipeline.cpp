#include "pico/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include "pico/mergers.hpp"

namespace pico {

namespace {

struct LayerOutcome {
    Matrix merged;
    double mean_source_norm = 0.0;
    std::vector<double> source_sq_norms;
    LayerCalibrationReport report;
};

template <class Fn>
void parallel_for(std::size_t count, unsigned max_threads, Fn&& fn) {
    const unsigned workers = std::max(1u, std::min<unsigned>(max_threads, static_cast<unsigned>(count)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < count; i = next++)
                        fn(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace

Matrix apply_merger(std::span<const Matrix> updates, const MergeConfig& config, int adapter_rank) {
    switch (config.merger) {
    case MergerKind::TaskArithmetic:
        return merge_task_arithmetic(updates, config.ta_lambda.value_or(1.0 / static_cast<double>(updates.size())));
    case MergerKind::Ties:
        return merge_ties(updates, config.ties_density, config.ties_lambda);
    case MergerKind::Tsv:
        return merge_tsv(updates, config.tsv_rank.value_or(adapter_rank));
    }
    throw ValidationError("unknown merger");
}

PipelineResult run_pipeline(const AdapterSet& set, const MergeConfig& config) {
    config.validate();
    const auto keys = set.keys();
    const int task_count = set.task_count();
    std::vector<LayerOutcome> outcomes(keys.size());

    parallel_for(keys.size(), config.max_threads, [&](std::size_t i) {
        const LayerKey& key = keys[i];
        const auto factors = set.factors_at(key);
        LayerCalibration calibrated = calibrate_layer(factors, config.calibration_space);

        std::vector<Matrix> updates;
        updates.reserve(calibrated.tasks.size());
        for (std::size_t t = 0; t < calibrated.tasks.size(); ++t) {
            Matrix& delta = calibrated.tasks[t].delta;
            if (config.dare_drop_rate > 0.0) {
                const auto seed = dare_seed(config.rng_seed, set.adapters()[t].task_id(), key);
                delta = dare_preprocess(delta, config.dare_drop_rate, seed);
            }
            updates.push_back(std::move(delta));
        }

        LayerOutcome& out = outcomes[i];
        out.merged = apply_merger(updates, config, set.rank());
        double norm_sum = 0.0;
        for (const auto* pair : factors) {
            const double sq = pair->delta().squaredNorm();
            out.source_sq_norms.push_back(sq);
            norm_sum += std::sqrt(sq);
        }
        out.mean_source_norm = norm_sum / task_count;
        out.report = std::move(calibrated.report);
    });

    PipelineResult result;
    result.config = config;
    result.merged.provenance.merger = to_string(config.merger);
    result.merged.provenance.calibration_space = to_string(config.calibration_space);
    result.merged.provenance.restore_magnitude = config.restore_magnitude;
    result.merged.provenance.gamma_scope = to_string(config.gamma_scope);

    std::vector<double> gammas(keys.size(), 1.0);
    if (config.restore_magnitude) {
        if (config.gamma_scope == GammaScope::PerLayer) {
            for (std::size_t i = 0; i < keys.size(); ++i) {
                const double merged_norm = outcomes[i].merged.norm();
                if (merged_norm > 0.0 && std::isfinite(merged_norm))
                    gammas[i] = outcomes[i].mean_source_norm / merged_norm;
                else
                    result.degenerate_layers.push_back(keys[i]);
            }
        } else {
            // whole-adapter norms: sqrt of the sum over layers of squared layer norms
            std::vector<double> task_sq(static_cast<std::size_t>(task_count), 0.0);
            double merged_sq = 0.0;
            for (const auto& o : outcomes) {
                for (std::size_t t = 0; t < o.source_sq_norms.size(); ++t)
                    task_sq[t] += o.source_sq_norms[t];
                merged_sq += o.merged.squaredNorm();
            }
            double mean_norm = 0.0;
            for (double sq : task_sq)
                mean_norm += std::sqrt(sq);
            mean_norm /= task_count;
            if (merged_sq > 0.0 && std::isfinite(merged_sq))
                std::fill(gammas.begin(), gammas.end(), mean_norm / std::sqrt(merged_sq));
            else
                result.degenerate_layers = keys;
        }
    }
    for (const auto& key : result.degenerate_layers)
        result.warnings.push_back("degenerate merge, cannot rescale: layer " + key.str());

    for (std::size_t i = 0; i < keys.size(); ++i) {
        const LayerKey& key = keys[i];
        if (outcomes[i].report.degenerate)
            result.warnings.push_back("all factors zero, calibration skipped: layer " + key.str());
        result.gamma[key] = gammas[i];
        result.merged.provenance.gamma[key] = gammas[i];
        result.merged.layers.emplace(key, gammas[i] * outcomes[i].merged);
        if (config.calibration_space != CalibrationSpace::None)
            result.calibration_report.emplace(key, std::move(outcomes[i].report));
    }
    return result;
}

std::string describe(const MergeConfig& config) {
    std::string out = to_string(config.merger) + "/" + to_string(config.calibration_space) + "/" +
                      (config.restore_magnitude ? "restore" : "no-restore");
    if (config.dare_drop_rate > 0.0)
        out += "/dare=" + std::to_string(config.dare_drop_rate);
    return out;
}

ComparisonReport compare_configs(const AdapterSet& set, std::span<const MergeConfig> configs) {
    if (configs.empty())
        throw ValidationError("compare needs at least one configuration");
    ComparisonReport report;
    for (const auto& config : configs) {
        ComparisonEntry entry;
        entry.label = describe(config);
        entry.result = run_pipeline(set, config);
        for (const auto& [key, delta] : entry.result.merged.layers) {
            if (delta.norm() > 0.0)
                entry.merged_b_stats.emplace(key, merged_b_stats(delta));
        }
        report.entries.push_back(std::move(entry));
    }
    const auto n = static_cast<Eigen::Index>(report.entries.size());
    report.distances = Matrix::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            double sq = 0.0;
            const auto& li = report.entries[static_cast<std::size_t>(i)].result.merged.layers;
            const auto& lj = report.entries[static_cast<std::size_t>(j)].result.merged.layers;
            for (const auto& [key, delta] : li)
                sq += (delta - lj.at(key)).squaredNorm();
            report.distances(i, j) = report.distances(j, i) = std::sqrt(sq);
        }
    }
    return report;
}

}  // namespace pico
