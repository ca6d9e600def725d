// pico_merge: diagnose, merge, synthesize and compare LoRA adapters.
//
// Exit codes: 0 success, 1 validation failure, 2 I/O failure, 3 numerical
// failure (including layers that could not be rescaled).

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "pico/adapter_io.hpp"
#include "pico/diagnostics.hpp"
#include "pico/pipeline.hpp"
#include "pico/report.hpp"
#include "pico/synth.hpp"

#ifndef PICO_VERSION
#define PICO_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pico;

namespace {

enum ExitCode { kOk = 0, kValidation = 1, kIo = 2, kNumerical = 3 };

std::string sha256_file(const fs::path& path) {
    const auto bytes = safetensors::read_bytes(path);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
        throw IoError("sha256 failed for '" + path.string() + "'");
    std::ostringstream out;
    for (unsigned int i = 0; i < length; ++i)
        out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
    return out.str();
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream out;
    out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return out.str();
}

unsigned thread_budget() {
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("PICO_MERGE_THREADS")) {
        try {
            const long cap = std::stol(env);
            if (cap < 1) throw ValidationError("PICO_MERGE_THREADS must be a positive integer");
            threads = std::min<unsigned>(threads, static_cast<unsigned>(cap));
        } catch (const std::logic_error&) {
            throw ValidationError(std::string("PICO_MERGE_THREADS is not an integer: '") + env + "'");
        }
    }
    return threads;
}

// Accumulates what a run read and wrote; emitted as the first report record.
struct Manifest {
    std::string command;
    json config = json::object();
    json inputs = json::array();
    std::vector<std::string> outputs;
    bool deterministic = false;

    void add_input(const fs::path& path) { inputs.push_back({{"path", path.string()}, {"sha256", sha256_file(path)}}); }

    json to_json() const {
        json out = {
            {"record", "manifest"},
            {"command", command},
            {"config", config},
            {"inputs", inputs},
            {"outputs", outputs},
            {"tool_version", PICO_VERSION},
        };
        if (!deterministic) out["timestamp"] = utc_timestamp();
        return out;
    }
};

struct CommonOptions {
    std::vector<std::string> adapters;
    std::string name_pattern = kDefaultNamePattern;
    std::string report_path;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, CommonOptions& opts, bool adapters_required = true) {
    auto* positional = cmd->add_option("adapters", opts.adapters, "Adapter directories (adapter_model.safetensors + adapter_config.json)");
    if (adapters_required) positional->required();
    cmd->add_option("--name-pattern", opts.name_pattern, "Tensor name template with {layer}, {module}, {factor}");
    cmd->add_option("--report", opts.report_path, "Line-delimited JSON report");
    cmd->add_flag("--deterministic", opts.deterministic, "Omit timestamps so identical runs give identical reports");
}

AdapterSet load_set(const CommonOptions& opts, Manifest& manifest) {
    std::vector<Adapter> adapters;
    for (const auto& dir : opts.adapters) {
        const auto desc = AdapterFileDescriptor::in_directory(dir, opts.name_pattern);
        manifest.add_input(desc.weights_path);
        manifest.add_input(desc.config_path);
        adapters.push_back(read_adapter(desc));
    }
    return AdapterSet(std::move(adapters));
}

// Writes the manifest followed by the records. The report path is itself listed.
void write_report(const CommonOptions& opts, Manifest& manifest, const std::vector<json>& records) {
    if (opts.report_path.empty()) return;
    manifest.outputs.push_back(opts.report_path);
    const fs::path path(opts.report_path);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report '" + opts.report_path + "'");
    out << manifest.to_json().dump() << '\n';
    for (const auto& r : records)
        out << r.dump() << '\n';
    if (!out) throw IoError("error writing report '" + opts.report_path + "'");
}

std::string fixed(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseOptions {
    CommonOptions common;
    bool spectrum = false;
    int top_k = 0;
    std::string csv_path;
    double rank_tol = kDefaultRankTol;
};

int cmd_diagnose(const DiagnoseOptions& opts) {
    Manifest manifest{.command = "diagnose", .deterministic = opts.common.deterministic};
    manifest.config = {{"spectrum", opts.spectrum}, {"top_k", opts.top_k}, {"rank_tol", opts.rank_tol},
                       {"name_pattern", opts.common.name_pattern}};
    const AdapterSet set = load_set(opts.common, manifest);
    if (set.task_count() < 2 && !opts.spectrum && opts.top_k == 0)
        throw ValidationError("overlap diagnostics need at least 2 adapters (use --spectrum for one)");

    std::vector<json> records;
    if (set.task_count() >= 2) {
        const auto overlap = pairwise_overlap(set, opts.rank_tol);
        json rec = report::to_json(overlap);
        rec["record"] = "overlap";
        records.push_back(std::move(rec));
        const auto& p = overlap.pooled;
        std::cout << "overlap over " << p.pair_count << " layer-pairs: mean O_B " << fixed(p.mean_o_b) << ", mean O_A "
                  << fixed(p.mean_o_a) << ", gap " << fixed(p.gap) << ", frac[O_B>O_A] " << fixed(p.frac_b_gt_a) << '\n';
        for (const auto& [module, s] : overlap.per_module)
            std::cout << "  " << module << ": mean O_B " << fixed(s.mean_o_b) << ", mean O_A " << fixed(s.mean_o_a)
                      << ", frac[O_B>O_A] " << fixed(s.frac_b_gt_a) << '\n';
        if (!opts.csv_path.empty()) {
            const fs::path path(opts.csv_path);
            if (path.has_parent_path()) fs::create_directories(path.parent_path());
            std::ofstream out(path);
            out << report::overlap_csv(overlap);
            if (!out) throw IoError("cannot write '" + opts.csv_path + "'");
            manifest.outputs.push_back(opts.csv_path);
        }
    } else if (!opts.csv_path.empty()) {
        throw ValidationError("--csv needs at least 2 adapters");
    }

    if (opts.spectrum) {
        for (const auto& adapter : set.adapters()) {
            for (const auto& [key, pair] : adapter.layers()) {
                const auto stats = spectral_stats(pair.b(), opts.rank_tol);
                json rec = report::to_json(key);
                rec["record"] = "spectrum";
                rec["task"] = adapter.task_id();
                rec["factor"] = "B";
                rec["stats"] = report::to_json(stats);
                records.push_back(std::move(rec));
                std::cout << adapter.task_id() << ' ' << key.str() << ": |B|_F " << fixed(stats.frobenius) << ", o_max "
                          << fixed(stats.o_max) << ", eff. rank " << fixed(stats.effective_rank) << ", stable rank "
                          << fixed(stats.stable_rank) << '\n';
            }
        }
    }

    if (opts.top_k > 0) {
        for (const auto& key : set.keys()) {
            json rec = report::to_json(task_contributions(set, key, opts.top_k));
            rec["record"] = "contributions";
            records.push_back(std::move(rec));
        }
    }
    write_report(opts.common, manifest, records);
    return kOk;
}

// ---------------------------------------------------------------- merge

struct MergeFlags {
    std::string merger;
    std::string calibrate;
    bool no_calibrate = false;
    bool restore = false;
    bool no_restore = false;
    std::string gamma_scope;
    double ta_lambda = 0.0;
    double ties_density = 0.0;
    double ties_lambda = 0.0;
    int tsv_rank = 0;
    double dare_p = 0.0;
    std::uint64_t seed = 0;
    std::string config_file;

    CLI::Option* merger_opt = nullptr;
    CLI::Option* calibrate_opt = nullptr;
    CLI::Option* gamma_scope_opt = nullptr;
    CLI::Option* ta_lambda_opt = nullptr;
    CLI::Option* ties_density_opt = nullptr;
    CLI::Option* ties_lambda_opt = nullptr;
    CLI::Option* tsv_rank_opt = nullptr;
    CLI::Option* dare_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
};

void add_merge_flags(CLI::App* cmd, MergeFlags& f, bool single_config) {
    if (single_config) {
        f.merger_opt = cmd->add_option("--merger", f.merger, "ta | ties | tsv");
        f.calibrate_opt = cmd->add_option("--calibrate", f.calibrate, "none | b | a | delta");
        auto* nocal = cmd->add_flag("--no-calibrate", f.no_calibrate, "Same as --calibrate none");
        nocal->excludes(f.calibrate_opt);
        auto* r = cmd->add_flag("--restore", f.restore, "Rescale merged layers to the mean source norm (default)");
        auto* nr = cmd->add_flag("--no-restore", f.no_restore, "Skip magnitude restoration");
        r->excludes(nr);
    }
    f.gamma_scope_opt = cmd->add_option("--gamma-scope", f.gamma_scope, "per-layer | global");
    f.ta_lambda_opt = cmd->add_option("--ta-lambda", f.ta_lambda, "Task Arithmetic scale (default 1/T)");
    f.ties_density_opt = cmd->add_option("--ties-density", f.ties_density, "TIES keep fraction");
    f.ties_lambda_opt = cmd->add_option("--ties-lambda", f.ties_lambda, "TIES output scale");
    f.tsv_rank_opt = cmd->add_option("--tsv-rank", f.tsv_rank, "TSV-M per-task rank (default r)");
    f.dare_opt = cmd->add_option("--dare-p", f.dare_p, "DARE drop rate applied before merging");
    f.seed_opt = cmd->add_option("--seed", f.seed, "DARE seed");
    cmd->add_option("--config", f.config_file, "JSON merge config; flags take precedence")->check(CLI::ExistingFile);
}

// defaults < config file < flags
MergeConfig resolve_config(const MergeFlags& f, Manifest* manifest) {
    MergeConfig config;
    if (!f.config_file.empty()) {
        std::ifstream in(f.config_file);
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ValidationError("malformed config file '" + f.config_file + "': " + e.what());
        }
        config = report::merge_config_from_json(doc, config);
        if (manifest) manifest->add_input(f.config_file);
    }
    if (f.merger_opt && f.merger_opt->count()) config.merger = parse_merger(f.merger);
    if (f.calibrate_opt && f.calibrate_opt->count()) config.calibration_space = parse_calibration_space(f.calibrate);
    if (f.no_calibrate) config.calibration_space = CalibrationSpace::None;
    if (f.restore) config.restore_magnitude = true;
    if (f.no_restore) config.restore_magnitude = false;
    if (f.gamma_scope_opt->count()) config.gamma_scope = parse_gamma_scope(f.gamma_scope);
    if (f.ta_lambda_opt->count()) config.ta_lambda = f.ta_lambda;
    if (f.ties_density_opt->count()) config.ties_density = f.ties_density;
    if (f.ties_lambda_opt->count()) config.ties_lambda = f.ties_lambda;
    if (f.tsv_rank_opt->count()) config.tsv_rank = f.tsv_rank;
    if (f.dare_opt->count()) config.dare_drop_rate = f.dare_p;
    if (f.seed_opt->count()) config.rng_seed = f.seed;
    config.max_threads = thread_budget();
    config.validate();
    return config;
}

struct MergeOptions {
    CommonOptions common;
    MergeFlags flags;
    std::string out_dir;
    std::string dense_out;
    int out_rank = 0;
    std::string dtype = "F32";
};

int report_degenerate(const PipelineResult& result) {
    if (result.degenerate_layers.empty()) return kOk;
    json layers = json::array();
    for (const auto& key : result.degenerate_layers)
        layers.push_back(key.str());
    std::cerr << json{{"error",
                       {{"kind", "numerical"},
                        {"exit_code", kNumerical},
                        {"message", "degenerate merge, cannot rescale"},
                        {"layers", layers}}}}
                     .dump()
              << '\n';
    return kNumerical;
}

int cmd_merge(const MergeOptions& opts) {
    Manifest manifest{.command = "merge", .deterministic = opts.common.deterministic};
    const MergeConfig config = resolve_config(opts.flags, &manifest);
    const AdapterSet set = load_set(opts.common, manifest);
    const auto dtype = safetensors::parse_dtype(opts.dtype);

    // T * r is lossless; capped at the smallest layer dimension, which is lossless too
    int out_rank = opts.out_rank;
    if (out_rank == 0) {
        out_rank = set.task_count() * set.rank();
        for (const auto& key : set.keys()) {
            const auto* pair = set.factors_at(key).front();
            out_rank = std::min<int>(out_rank, static_cast<int>(std::min(pair->d_out(), pair->d_in())));
        }
    }
    json resolved = report::to_json(config);
    resolved["out_rank"] = out_rank;
    resolved["dtype"] = opts.dtype;
    resolved["name_pattern"] = opts.common.name_pattern;
    manifest.config = resolved;

    const PipelineResult result = run_pipeline(set, config);

    const auto desc = AdapterFileDescriptor::in_directory(opts.out_dir, opts.common.name_pattern);
    write_merged(result.merged, out_rank, desc, dtype);
    manifest.outputs.push_back(desc.weights_path.string());
    manifest.outputs.push_back(desc.config_path.string());
    if (!opts.dense_out.empty()) {
        write_dense_patch(result.merged, opts.dense_out, opts.common.name_pattern, dtype);
        manifest.outputs.push_back(opts.dense_out);
    }

    json rec = report::to_json(result, set);
    rec["record"] = "merge";
    write_report(opts.common, manifest, {rec});

    std::cout << "merged " << set.task_count() << " adapters (" << describe(config) << ") over " << set.keys().size()
              << " layers into " << desc.weights_path.string() << " at rank " << out_rank << '\n';
    for (const auto& [key, delta] : result.merged.layers) {
        std::cout << "  " << key.str() << ": gamma " << fixed(result.gamma.at(key)) << ", |dW|_F " << fixed(delta.norm());
        if (delta.norm() > 0.0) {
            const auto stats = merged_b_stats(delta);
            std::cout << ", o_max " << fixed(stats.o_max) << ", eff. rank " << fixed(stats.effective_rank);
        }
        std::cout << '\n';
    }
    for (const auto& w : result.warnings)
        std::cout << "warning: " << w << '\n';
    return report_degenerate(result);
}

// ---------------------------------------------------------------- synth

struct SynthOptions {
    std::string kind;
    std::string out_dir;
    std::string report_path;
    bool deterministic = false;
    std::string dtype = "F32";
    int tasks = 4;
    int dim_out = 0;
    int dim_in = 0;
    std::uint64_t seed = 0;
    // toy
    double shared_coeff = 1.0;
    double specific_coeff = 1.0;
    bool random_a = false;
    // overlap
    int rank = 16;
    double rho = 0.7;
    int shared_dim = 2;
    int layers = 1;
    std::vector<std::string> modules{"q_proj", "v_proj"};
    bool random_specifics = false;
};

int cmd_synth(const SynthOptions& opts) {
    Manifest manifest{.command = "synth", .deterministic = opts.deterministic};
    const auto dtype = safetensors::parse_dtype(opts.dtype);
    AdapterSet set = [&] {
        if (opts.kind == "toy") {
            ToySpec spec;
            spec.task_count = opts.tasks;
            if (opts.dim_out) spec.dim_out = opts.dim_out;
            if (opts.dim_in) spec.dim_in = opts.dim_in;
            spec.shared_coeff = opts.shared_coeff;
            spec.specific_coeff = opts.specific_coeff;
            spec.seed = opts.seed;
            spec.random_a_per_task = opts.random_a;
            manifest.config = {{"kind", "toy"},          {"tasks", spec.task_count},   {"dim_out", spec.dim_out},
                               {"dim_in", spec.dim_in},  {"a", spec.shared_coeff},     {"b", spec.specific_coeff},
                               {"seed", spec.seed},      {"random_a", spec.random_a_per_task}};
            return gen_toy(spec).set;
        }
        OverlapSpec spec;
        spec.task_count = opts.tasks;
        if (opts.dim_out) spec.dim_out = opts.dim_out;
        if (opts.dim_in) spec.dim_in = opts.dim_in;
        spec.rank = opts.rank;
        spec.shared_energy_fraction = opts.rho;
        spec.shared_subspace_dim = opts.shared_dim;
        spec.num_layers = opts.layers;
        spec.modules = opts.modules;
        spec.orthogonal_specifics = !opts.random_specifics;
        spec.seed = opts.seed;
        auto generated = gen_overlap_set(spec);
        manifest.config = {{"kind", "overlap"},
                           {"tasks", spec.task_count},
                           {"dim_out", spec.dim_out},
                           {"dim_in", spec.dim_in},
                           {"rank", spec.rank},
                           {"rho", spec.shared_energy_fraction},
                           {"shared_dim", spec.shared_subspace_dim},
                           {"layers", spec.num_layers},
                           {"modules", spec.modules},
                           {"orthogonal_specifics", spec.orthogonal_specifics},
                           {"specifics_fell_back", generated.specifics_fell_back},
                           {"seed", spec.seed}};
        if (generated.specifics_fell_back)
            std::cout << "warning: orthogonal specific frames do not fit in dim_out; drew random frames instead\n";
        return std::move(generated.set);
    }();
    manifest.config["dtype"] = opts.dtype;

    for (const auto& adapter : set.adapters()) {
        const auto desc = AdapterFileDescriptor::in_directory(fs::path(opts.out_dir) / adapter.task_id());
        write_adapter(adapter, desc, dtype);
        manifest.outputs.push_back(desc.weights_path.string());
        manifest.outputs.push_back(desc.config_path.string());
        std::cout << "wrote " << desc.weights_path.string() << '\n';
    }
    CommonOptions common;
    common.report_path = opts.report_path;
    write_report(common, manifest, {});
    return kOk;
}

// ---------------------------------------------------------------- compare

struct CompareOptions {
    CommonOptions common;
    MergeFlags flags;
    std::vector<std::string> mergers{"ta"};
    std::vector<std::string> calibrations{"none", "b"};
    std::vector<std::string> restore_modes{"restore"};
};

int cmd_compare(const CompareOptions& opts) {
    Manifest manifest{.command = "compare", .deterministic = opts.common.deterministic};
    const MergeConfig base = resolve_config(opts.flags, &manifest);
    std::vector<MergeConfig> configs;
    for (const auto& m : opts.mergers) {
        for (const auto& c : opts.calibrations) {
            for (const auto& r : opts.restore_modes) {
                MergeConfig config = base;
                config.merger = parse_merger(m);
                config.calibration_space = parse_calibration_space(c);
                if (r == "restore")
                    config.restore_magnitude = true;
                else if (r == "no-restore")
                    config.restore_magnitude = false;
                else
                    throw ValidationError("restore mode must be 'restore' or 'no-restore', got '" + r + "'");
                configs.push_back(config);
            }
        }
    }
    const AdapterSet set = load_set(opts.common, manifest);
    json grid = json::array();
    for (const auto& c : configs)
        grid.push_back(report::to_json(c));
    manifest.config = {{"configs", grid}, {"name_pattern", opts.common.name_pattern}};

    const auto comparison = compare_configs(set, configs);
    std::vector<json> records;
    for (const auto& entry : comparison.entries) {
        json rec = report::to_json(entry.result, set);
        rec["record"] = "result";
        rec["label"] = entry.label;
        records.push_back(std::move(rec));
    }
    json summary = report::to_json(comparison);
    summary["record"] = "comparison";
    records.push_back(std::move(summary));
    write_report(opts.common, manifest, records);

    std::cout << std::left << std::setw(40) << "configuration" << std::setw(12) << "o_max" << std::setw(12)
              << "eff. rank" << "stable rank\n";
    int code = kOk;
    for (const auto& entry : comparison.entries) {
        double o_max = 0.0, er = 0.0, sr = 0.0;
        for (const auto& [key, stats] : entry.merged_b_stats) {
            o_max += stats.o_max;
            er += stats.effective_rank;
            sr += stats.stable_rank;
        }
        const double n = std::max<double>(1.0, static_cast<double>(entry.merged_b_stats.size()));
        std::cout << std::setw(40) << entry.label << std::setw(12) << fixed(o_max / n) << std::setw(12) << fixed(er / n)
                  << fixed(sr / n) << '\n';
        if (report_degenerate(entry.result) != kOk) code = kNumerical;
    }
    std::cout << "(means over layers of the merged update spectrum)\n";
    return code;
}

void error_record(const char* kind, int code, const std::string& message) {
    std::cerr << json{{"error", {{"kind", kind}, {"exit_code", code}, {"message", message}}}}.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LoRA adapter merging with output-side calibration"};
    app.set_version_flag("--version", PICO_VERSION);
    app.require_subcommand(1);

    DiagnoseOptions diag;
    auto* diagnose = app.add_subcommand("diagnose", "Pairwise overlap and spectral diagnostics");
    add_common(diagnose, diag.common);
    diagnose->add_flag("--spectrum", diag.spectrum, "Per-layer spectral statistics of every B factor");
    diagnose->add_option("--top-k", diag.top_k, "Task contributions to the top-k shared components");
    diagnose->add_option("--csv", diag.csv_path, "Pairwise overlap CSV");
    diagnose->add_option("--rank-tol", diag.rank_tol, "Relative singular value cutoff for numerical rank");

    MergeOptions merge_opts;
    auto* merge = app.add_subcommand("merge", "Calibrate and merge adapters");
    add_common(merge, merge_opts.common);
    add_merge_flags(merge, merge_opts.flags, true);
    merge->add_option("--out", merge_opts.out_dir, "Output adapter directory")->required();
    merge->add_option("--dense-out", merge_opts.dense_out, "Also write dense dW tensors to this file");
    merge->add_option("--out-rank", merge_opts.out_rank, "Rank of the written adapter (default min(T*r, smallest layer dim))");
    merge->add_option("--dtype", merge_opts.dtype, "F32 | F64 | F16 | BF16");

    SynthOptions synth_opts;
    auto* synth = app.add_subcommand("synth", "Write synthetic adapter sets");
    synth->add_option("kind", synth_opts.kind, "toy | overlap")->required()->check(CLI::IsMember({"toy", "overlap"}));
    synth->add_option("--out", synth_opts.out_dir, "Output directory, one subdirectory per task")->required();
    synth->add_option("--report", synth_opts.report_path, "Line-delimited JSON report");
    synth->add_flag("--deterministic", synth_opts.deterministic, "Omit timestamps");
    synth->add_option("--dtype", synth_opts.dtype, "F32 | F64 | F16 | BF16");
    synth->add_option("--tasks", synth_opts.tasks, "Number of tasks T");
    synth->add_option("--dim-out", synth_opts.dim_out, "Output dimension");
    synth->add_option("--dim-in", synth_opts.dim_in, "Input dimension");
    synth->add_option("--seed", synth_opts.seed, "Generator seed");
    synth->add_option("--shared-coeff", synth_opts.shared_coeff, "toy: shared coefficient a");
    synth->add_option("--specific-coeff", synth_opts.specific_coeff, "toy: specific coefficient b");
    synth->add_flag("--random-a", synth_opts.random_a, "toy: independent A rows per task");
    synth->add_option("--rank", synth_opts.rank, "overlap: adapter rank");
    synth->add_option("--rho", synth_opts.rho, "overlap: shared energy fraction");
    synth->add_option("--shared-dim", synth_opts.shared_dim, "overlap: shared subspace dimension");
    synth->add_option("--layers", synth_opts.layers, "overlap: number of layers");
    synth->add_option("--modules", synth_opts.modules, "overlap: module names")->delimiter(',');
    synth->add_flag("--random-specifics", synth_opts.random_specifics, "overlap: random instead of orthogonal specific frames");

    CompareOptions cmp;
    auto* compare = app.add_subcommand("compare", "Run a grid of merge configurations");
    add_common(compare, cmp.common);
    add_merge_flags(compare, cmp.flags, false);
    compare->add_option("--mergers", cmp.mergers, "Comma-separated mergers")->delimiter(',');
    compare->add_option("--calibrations", cmp.calibrations, "Comma-separated calibration spaces")->delimiter(',');
    compare->add_option("--restore-modes", cmp.restore_modes, "restore and/or no-restore")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) error_record("validation", kValidation, e.what());
        return code == 0 ? kOk : kValidation;
    }

    try {
        if (*diagnose) return cmd_diagnose(diag);
        if (*merge) return cmd_merge(merge_opts);
        if (*synth) return cmd_synth(synth_opts);
        if (*compare) return cmd_compare(cmp);
    } catch (const ValidationError& e) {
        error_record("validation", kValidation, e.what());
        return kValidation;
    } catch (const IoError& e) {
        error_record("io", kIo, e.what());
        return kIo;
    } catch (const fs::filesystem_error& e) {
        error_record("io", kIo, e.what());
        return kIo;
    } catch (const NumericalError& e) {
        error_record("numerical", kNumerical, e.what());
        return kNumerical;
    }
    return kOk;
}
