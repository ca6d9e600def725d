#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pico/adapter_io.hpp"
#include "pico/calibration.hpp"
#include "pico/diagnostics.hpp"
#include "pico/mergers.hpp"
#include "pico/numerics.hpp"
#include "pico/pipeline.hpp"
#include "pico/report.hpp"
#include "pico/synth.hpp"

namespace py = pybind11;
using namespace pico;

namespace {

py::object to_python(const nlohmann::json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

Side parse_side(const std::string& side) {
    if (side == "columns" || side == "b") return Side::Columns;
    if (side == "rows" || side == "a") return Side::Rows;
    throw ValidationError("side must be 'columns' or 'rows', got '" + side + "'");
}

using LayerDict = std::map<std::pair<int, std::string>, std::pair<Matrix, Matrix>>;

Adapter make_adapter(std::string task_id, const LayerDict& layers, Metadata metadata) {
    std::map<LayerKey, LoraFactorPair> out;
    for (const auto& [key, factors] : layers)
        out.emplace(LayerKey{key.first, key.second}, LoraFactorPair(factors.first, factors.second));
    return Adapter(std::move(task_id), std::move(out), std::move(metadata));
}

std::map<LayerKey, Matrix> layers_of(const MergedUpdate& update) { return update.layers; }

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "LoRA adapter calibration, merging and diagnostics";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    py::class_<LayerKey>(m, "LayerKey")
        .def(py::init<int, std::string>(), py::arg("layer_index"), py::arg("module_name"))
        .def_readonly("layer_index", &LayerKey::layer_index)
        .def_readonly("module_name", &LayerKey::module_name)
        .def("__str__", &LayerKey::str)
        .def("__repr__", [](const LayerKey& k) { return "LayerKey(" + std::to_string(k.layer_index) + ", '" + k.module_name + "')"; })
        .def("__eq__", [](const LayerKey& a, const LayerKey& b) { return a == b; })
        .def("__lt__", [](const LayerKey& a, const LayerKey& b) { return a < b; })
        .def("__hash__", [](const LayerKey& k) { return py::hash(py::make_tuple(k.layer_index, k.module_name)); });

    py::class_<Adapter>(m, "Adapter")
        .def(py::init(&make_adapter), py::arg("task_id"), py::arg("layers"), py::arg("metadata") = Metadata{},
             "layers: {(layer_index, module_name): (a, b)} with a of shape (r, d_in) and b of shape (d_out, r)")
        .def_property_readonly("task_id", &Adapter::task_id)
        .def_property_readonly("rank", &Adapter::rank)
        .def_property_readonly("metadata", &Adapter::metadata)
        .def("keys", [](const Adapter& a) {
            std::vector<LayerKey> keys;
            for (const auto& [k, _] : a.layers())
                keys.push_back(k);
            return keys;
        })
        .def("factors", [](const Adapter& a, const LayerKey& k) { return std::make_pair(a.at(k).a(), a.at(k).b()); })
        .def("delta", [](const Adapter& a, const LayerKey& k) { return a.at(k).delta(); });

    py::class_<AdapterSet>(m, "AdapterSet")
        .def(py::init<std::vector<Adapter>>(), py::arg("adapters"))
        .def_property_readonly("task_count", &AdapterSet::task_count)
        .def_property_readonly("rank", &AdapterSet::rank)
        .def_property_readonly("adapters", &AdapterSet::adapters)
        .def("keys", &AdapterSet::keys)
        .def("deltas", &AdapterSet::deltas_at)
        .def("__len__", &AdapterSet::size);

    py::class_<MergeConfig>(m, "MergeConfig")
        .def(py::init<>())
        .def_property(
            "merger", [](const MergeConfig& c) { return to_string(c.merger); },
            [](MergeConfig& c, const std::string& s) { c.merger = parse_merger(s); })
        .def_property(
            "calibration_space", [](const MergeConfig& c) { return to_string(c.calibration_space); },
            [](MergeConfig& c, const std::string& s) { c.calibration_space = parse_calibration_space(s); })
        .def_property(
            "gamma_scope", [](const MergeConfig& c) { return to_string(c.gamma_scope); },
            [](MergeConfig& c, const std::string& s) { c.gamma_scope = parse_gamma_scope(s); })
        .def_readwrite("restore_magnitude", &MergeConfig::restore_magnitude)
        .def_readwrite("ta_lambda", &MergeConfig::ta_lambda)
        .def_readwrite("ties_density", &MergeConfig::ties_density)
        .def_readwrite("ties_lambda", &MergeConfig::ties_lambda)
        .def_readwrite("tsv_rank", &MergeConfig::tsv_rank)
        .def_readwrite("dare_drop_rate", &MergeConfig::dare_drop_rate)
        .def_readwrite("rng_seed", &MergeConfig::rng_seed)
        .def_readwrite("max_threads", &MergeConfig::max_threads)
        .def("validate", &MergeConfig::validate)
        .def("describe", [](const MergeConfig& c) { return describe(c); });

    py::class_<PipelineResult>(m, "PipelineResult")
        .def_property_readonly("layers", [](const PipelineResult& r) { return layers_of(r.merged); })
        .def_readonly("gamma", &PipelineResult::gamma)
        .def_readonly("degenerate_layers", &PipelineResult::degenerate_layers)
        .def_readonly("warnings", &PipelineResult::warnings)
        .def_readonly("config", &PipelineResult::config)
        .def("report", [](const PipelineResult& r, const AdapterSet& set) { return to_python(report::to_json(r, set)); });

    // numerics
    m.def("thin_svd", [](const Matrix& x) {
        auto s = thin_svd(x);
        return py::make_tuple(s.u, s.sigma, s.v);
    });
    m.def("numerical_rank", &numerical_rank, py::arg("sigma"), py::arg("tol") = kDefaultRankTol);
    m.def("orthonormal_basis", [](const Matrix& x, const std::string& side, double tol) {
        return orthonormal_basis(x, parse_side(side), tol);
    }, py::arg("m"), py::arg("side") = "columns", py::arg("tol") = kDefaultRankTol);

    // diagnostics
    m.def("overlap_score", [](const Matrix& a, const Matrix& b, const std::string& side, int r, double tol) {
        return overlap_score(a, b, parse_side(side), r, tol);
    }, py::arg("m1"), py::arg("m2"), py::arg("side"), py::arg("r"), py::arg("rank_tol") = kDefaultRankTol);
    m.def("effective_rank", [](const Vector& s) { return effective_rank(s); });
    m.def("component_energy", [](const std::vector<double>& c) { return component_energy(c); });
    m.def("spectral_stats", [](const Matrix& x, double tol) { return to_python(report::to_json(spectral_stats(x, tol))); },
          py::arg("m"), py::arg("rank_tol") = kDefaultRankTol);
    m.def("merged_b_stats", [](const Matrix& x, double tol) { return to_python(report::to_json(merged_b_stats(x, tol))); },
          py::arg("delta"), py::arg("rank_tol") = kDefaultRankTol);
    m.def("pairwise_overlap", [](const AdapterSet& set, double tol) { return to_python(report::to_json(pairwise_overlap(set, tol))); },
          py::arg("set"), py::arg("rank_tol") = kDefaultRankTol);
    m.def("task_contributions", [](const AdapterSet& set, const LayerKey& key, int top_k) {
        return to_python(report::to_json(task_contributions(set, key, top_k)));
    });

    // calibration
    m.def("shared_basis", [](const AdapterSet& set, const LayerKey& key, const std::string& space) {
        auto basis = build_shared_basis(set, key, parse_calibration_space(space));
        return py::make_tuple(basis.u, basis.sigma);
    }, py::arg("set"), py::arg("key"), py::arg("space") = "b");
    m.def("sharing_profile", [](const Vector& sigma, int task_count) {
        SharedBasis basis;
        basis.sigma = sigma;
        auto p = sharing_profile(basis, task_count);
        return py::make_tuple(p.s, p.alpha);
    }, py::arg("sigma"), py::arg("task_count"));
    m.def("calibrate_layer", [](const AdapterSet& set, const LayerKey& key, const std::string& space) {
        auto layer = calibrate_layer(set.factors_at(key), parse_calibration_space(space));
        std::vector<Matrix> deltas;
        for (auto& t : layer.tasks)
            deltas.push_back(std::move(t.delta));
        return py::make_tuple(deltas, to_python(report::to_json(layer.report)));
    }, py::arg("set"), py::arg("key"), py::arg("space") = "b");

    // mergers
    m.def("merge_task_arithmetic", [](const std::vector<Matrix>& u, double lambda) { return merge_task_arithmetic(u, lambda); });
    m.def("merge_ties", [](const std::vector<Matrix>& u, double density, double lambda) { return merge_ties(u, density, lambda); },
          py::arg("updates"), py::arg("density"), py::arg("lam") = 1.0);
    m.def("merge_tsv", [](const std::vector<Matrix>& u, int k) { return merge_tsv(u, k); });
    m.def("dare_preprocess", &dare_preprocess, py::arg("update"), py::arg("drop_rate"), py::arg("seed"));

    // pipeline
    m.def("run_pipeline", &run_pipeline, py::arg("set"), py::arg("config"), py::call_guard<py::gil_scoped_release>());
    m.def("compare_configs", [](const AdapterSet& set, const std::vector<MergeConfig>& configs) {
        return to_python(report::to_json(compare_configs(set, configs)));
    });

    // synth
    m.def("gen_toy", [](int task_count, int dim_out, int dim_in, double a, double b, std::uint64_t seed, bool random_a) {
        ToySpec spec{task_count, dim_out, dim_in, a, b, seed, random_a};
        auto toy = gen_toy(spec);
        return py::make_tuple(std::move(toy.set), toy.u, toy.v, toy.key);
    }, py::arg("task_count") = 4, py::arg("dim_out") = 16, py::arg("dim_in") = 16, py::arg("shared_coeff") = 1.0,
          py::arg("specific_coeff") = 1.0, py::arg("seed") = 0, py::arg("random_a_per_task") = false);
    m.def("gen_overlap_set", [](int task_count, int dim_out, int dim_in, int rank, double rho, int shared_dim, int num_layers,
                                std::vector<std::string> modules, bool orthogonal, std::uint64_t seed) {
        OverlapSpec spec{task_count, dim_out, dim_in, rank, rho, shared_dim, num_layers, std::move(modules), orthogonal, seed};
        auto out = gen_overlap_set(spec);
        return py::make_tuple(std::move(out.set), out.specifics_fell_back);
    }, py::arg("task_count") = 4, py::arg("dim_out") = 256, py::arg("dim_in") = 256, py::arg("rank") = 16,
          py::arg("shared_energy_fraction") = 0.7, py::arg("shared_subspace_dim") = 2, py::arg("num_layers") = 1,
          py::arg("modules") = std::vector<std::string>{"q_proj", "v_proj"}, py::arg("orthogonal_specifics") = true,
          py::arg("seed") = 0);
    m.def("oracle_linear_average", &oracle_linear_average);

    // files
    m.def("read_adapter", [](const std::filesystem::path& dir, const std::string& pattern) {
        return read_adapter(AdapterFileDescriptor::in_directory(dir, pattern));
    }, py::arg("directory"), py::arg("name_pattern") = std::string(kDefaultNamePattern));
    m.def("write_adapter", [](const Adapter& adapter, const std::filesystem::path& dir, const std::string& dtype,
                              const std::string& pattern) {
        write_adapter(adapter, AdapterFileDescriptor::in_directory(dir, pattern), safetensors::parse_dtype(dtype));
    }, py::arg("adapter"), py::arg("directory"), py::arg("dtype") = "F32",
          py::arg("name_pattern") = std::string(kDefaultNamePattern));
    m.def("write_merged", [](const PipelineResult& result, int out_rank, const std::filesystem::path& dir,
                             const std::string& dtype, const std::string& pattern) {
        write_merged(result.merged, out_rank, AdapterFileDescriptor::in_directory(dir, pattern), safetensors::parse_dtype(dtype));
    }, py::arg("result"), py::arg("out_rank"), py::arg("directory"), py::arg("dtype") = "F32",
          py::arg("name_pattern") = std::string(kDefaultNamePattern));

    m.attr("DEFAULT_NAME_PATTERN") = kDefaultNamePattern;
    (void)base;
}
