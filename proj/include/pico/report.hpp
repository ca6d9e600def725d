#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "pico/calibration.hpp"
#include "pico/diagnostics.hpp"
#include "pico/pipeline.hpp"

// JSON and CSV views of the analysis results. Per-layer data are emitted as
// arrays ordered by (layer index, module name); infinities become "inf".
namespace pico::report {

using nlohmann::json;

json number(double value);
json to_json(const LayerKey& key);
json to_json(const SpectralStats& stats);
json to_json(const OverlapSummary& summary);
json to_json(const OverlapReport& report);
json to_json(const TaskContributionProfile& profile);
json to_json(const LayerCalibrationReport& report);
json to_json(const MergeConfig& config);
json to_json(const PipelineResult& result, const AdapterSet& source);
json to_json(const ComparisonReport& report);

MergeConfig merge_config_from_json(const json& doc, MergeConfig base = {});

// One row per layer-pair-metric: layer,module,task_i,task_j,metric,value
std::string overlap_csv(const OverlapReport& report);

}  // namespace pico::report
