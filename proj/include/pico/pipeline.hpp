#pragma once

#include "pico/calibration.hpp"
#include "pico/core.hpp"
#include "pico/diagnostics.hpp"

namespace pico {

struct PipelineResult {
    MergedUpdate merged;
    std::map<LayerKey, double> gamma;
    std::map<LayerKey, LayerCalibrationReport> calibration_report;  // empty when calibration is off
    std::vector<LayerKey> degenerate_layers;  // zero merged norm, left at gamma = 1
    std::vector<std::string> warnings;
    MergeConfig config;
};

/// Calibrate, optionally DARE-preprocess, merge, and restore magnitude.
///
/// With restore_magnitude the merged update of every layer is scaled by
///   gamma = mean_t ||dW_t||_F / ||dW_calib||_F
/// using the uncalibrated source updates. A layer whose merged update is zero
/// keeps gamma = 1 and is listed in degenerate_layers.
PipelineResult run_pipeline(const AdapterSet& set, const MergeConfig& config);

/// The merge rule of `config` applied to one layer's dense updates.
Matrix apply_merger(std::span<const Matrix> updates, const MergeConfig& config, int adapter_rank);

struct ComparisonEntry {
    std::string label;
    PipelineResult result;
    std::map<LayerKey, SpectralStats> merged_b_stats;
};

struct ComparisonReport {
    std::vector<ComparisonEntry> entries;
    Matrix distances;  // Frobenius distance over all layers, entries x entries
};

ComparisonReport compare_configs(const AdapterSet& set, std::span<const MergeConfig> configs);

std::string describe(const MergeConfig& config);

}  // namespace pico
