#include "pico/report.hpp"

#include <cmath>
#include <sstream>

namespace pico::report {

namespace {

json vec(const Vector& v) {
    json out = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i)
        out.push_back(number(v(i)));
    return out;
}

json mat(const Matrix& m) {
    json out = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            row.push_back(number(m(i, j)));
        out.push_back(std::move(row));
    }
    return out;
}

json keyed(const LayerKey& key, json body) {
    json out = to_json(key);
    out.update(body);
    return out;
}

}  // namespace

json number(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    return value;
}

json to_json(const LayerKey& key) {
    return {{"layer", key.layer_index}, {"module", key.module_name}};
}

json to_json(const SpectralStats& s) {
    return {
        {"frobenius", number(s.frobenius)},
        {"o_max", number(s.o_max)},
        {"effective_rank", number(s.effective_rank)},
        {"stable_rank", number(s.stable_rank)},
        {"condition_number", number(s.condition_number)},
        {"numerical_rank", s.numerical_rank},
        {"components", s.components},
    };
}

json to_json(const OverlapSummary& s) {
    return {
        {"mean_o_b", number(s.mean_o_b)},
        {"mean_o_a", number(s.mean_o_a)},
        {"gap", number(s.gap)},
        {"frac_o_b_gt_o_a", number(s.frac_b_gt_a)},
        {"pairs", s.pair_count},
    };
}

json to_json(const OverlapReport& report) {
    json layers = json::array();
    for (const auto& [key, layer] : report.layers) {
        layers.push_back(keyed(key, {
                                        {"o_b", mat(layer.o_b)},
                                        {"o_a", mat(layer.o_a)},
                                        {"numerical_rank_b", layer.rank_b},
                                        {"numerical_rank_a", layer.rank_a},
                                    }));
    }
    json per_module = json::object();
    for (const auto& [module, summary] : report.per_module)
        per_module[module] = to_json(summary);
    return {
        {"tasks", report.task_ids},
        {"rank", report.rank},
        {"diagonal", "self overlap = numerical rank / r"},
        {"layers", std::move(layers)},
        {"summary", {{"pooled", to_json(report.pooled)}, {"per_module", std::move(per_module)}}},
    };
}

json to_json(const TaskContributionProfile& p) {
    return keyed(p.key, {
                            {"tasks", p.task_ids},
                            {"normalization", TaskContributionProfile::normalization},
                            {"contributions", p.contributions},
                            {"energy", p.energy},
                            {"cumulative_energy", p.cumulative},
                        });
}

json to_json(const LayerCalibrationReport& r) {
    return {
        {"sigma", vec(r.sigma)},
        {"s", vec(r.s)},
        {"alpha", vec(r.alpha)},
        {"energy_removed", number(r.energy_removed)},
        {"degenerate", r.degenerate},
    };
}

json to_json(const MergeConfig& c) {
    return {
        {"merger", to_string(c.merger)},
        {"calibration_space", to_string(c.calibration_space)},
        {"restore_magnitude", c.restore_magnitude},
        {"gamma_scope", to_string(c.gamma_scope)},
        {"ta_lambda", c.ta_lambda ? json(*c.ta_lambda) : json("1/T")},
        {"ties_density", c.ties_density},
        {"ties_lambda", c.ties_lambda},
        {"tsv_rank", c.tsv_rank ? json(*c.tsv_rank) : json("auto")},
        {"dare_drop_rate", c.dare_drop_rate},
        {"rng_seed", c.rng_seed},
    };
}

MergeConfig merge_config_from_json(const json& doc, MergeConfig base) {
    try {
        if (doc.contains("merger")) base.merger = parse_merger(doc["merger"].get<std::string>());
        if (doc.contains("calibration_space"))
            base.calibration_space = parse_calibration_space(doc["calibration_space"].get<std::string>());
        if (doc.contains("restore_magnitude")) base.restore_magnitude = doc["restore_magnitude"].get<bool>();
        if (doc.contains("gamma_scope")) base.gamma_scope = parse_gamma_scope(doc["gamma_scope"].get<std::string>());
        if (doc.contains("ta_lambda")) {
            if (doc["ta_lambda"].is_number())
                base.ta_lambda = doc["ta_lambda"].get<double>();
            else
                base.ta_lambda.reset();
        }
        if (doc.contains("ties_density")) base.ties_density = doc["ties_density"].get<double>();
        if (doc.contains("ties_lambda")) base.ties_lambda = doc["ties_lambda"].get<double>();
        if (doc.contains("tsv_rank")) {
            if (doc["tsv_rank"].is_number_integer())
                base.tsv_rank = doc["tsv_rank"].get<int>();
            else
                base.tsv_rank.reset();
        }
        if (doc.contains("dare_drop_rate")) base.dare_drop_rate = doc["dare_drop_rate"].get<double>();
        if (doc.contains("rng_seed")) base.rng_seed = doc["rng_seed"].get<std::uint64_t>();
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed merge config: ") + e.what());
    }
    base.validate();
    return base;
}

json to_json(const PipelineResult& result, const AdapterSet& source) {
    json layers = json::array();
    for (const auto& [key, delta] : result.merged.layers) {
        double mean_norm = 0.0;
        for (const auto& adapter : source.adapters())
            mean_norm += adapter.at(key).delta().norm();
        mean_norm /= source.task_count();
        json body = {
            {"gamma", number(result.gamma.at(key))},
            {"merged_frobenius", number(delta.norm())},
            {"mean_source_frobenius", number(mean_norm)},
        };
        if (delta.norm() > 0.0)
            body["merged_b_stats"] = to_json(merged_b_stats(delta));
        if (auto it = result.calibration_report.find(key); it != result.calibration_report.end())
            body["calibration"] = to_json(it->second);
        layers.push_back(keyed(key, std::move(body)));
    }
    json degenerate = json::array();
    for (const auto& key : result.degenerate_layers)
        degenerate.push_back(to_json(key));
    return {
        {"config", to_json(result.config)},
        {"layers", std::move(layers)},
        {"degenerate_layers", std::move(degenerate)},
        {"warnings", result.warnings},
    };
}

json to_json(const ComparisonReport& report) {
    json entries = json::array();
    for (const auto& entry : report.entries) {
        json layers = json::array();
        for (const auto& [key, stats] : entry.merged_b_stats)
            layers.push_back(keyed(key, {{"merged_b_stats", to_json(stats)}, {"gamma", number(entry.result.gamma.at(key))}}));
        entries.push_back({
            {"label", entry.label},
            {"config", to_json(entry.result.config)},
            {"layers", std::move(layers)},
        });
    }
    json labels = json::array();
    for (const auto& entry : report.entries)
        labels.push_back(entry.label);
    return {{"entries", std::move(entries)}, {"labels", std::move(labels)}, {"distances", mat(report.distances)}};
}

std::string overlap_csv(const OverlapReport& report) {
    std::ostringstream out;
    out.precision(17);
    out << "layer,module,task_i,task_j,metric,value\n";
    const auto n = static_cast<Eigen::Index>(report.task_ids.size());
    for (const auto& [key, layer] : report.layers) {
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = i + 1; j < n; ++j) {
                const auto& ti = report.task_ids[static_cast<std::size_t>(i)];
                const auto& tj = report.task_ids[static_cast<std::size_t>(j)];
                out << key.layer_index << ',' << key.module_name << ',' << ti << ',' << tj << ",o_b," << layer.o_b(i, j)
                    << '\n';
                out << key.layer_index << ',' << key.module_name << ',' << ti << ',' << tj << ",o_a," << layer.o_a(i, j)
                    << '\n';
            }
        }
    }
    return out.str();
}

}  // namespace pico::report
