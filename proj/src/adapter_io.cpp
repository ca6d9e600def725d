#include "pico/adapter_io.hpp"

#include <fstream>
#include <regex>
#include <set>

#include <nlohmann/json.hpp>

#include "pico/numerics.hpp"

namespace pico {

using nlohmann::json;
namespace fs = std::filesystem;

AdapterFileDescriptor AdapterFileDescriptor::in_directory(const fs::path& dir, std::string name_pattern) {
    return {dir / "adapter_model.safetensors", dir / "adapter_config.json", std::move(name_pattern)};
}

void AdapterFileDescriptor::validate() const {
    for (const char* field : {"{layer}", "{module}", "{factor}"}) {
        if (name_pattern.find(field) == std::string::npos)
            throw ValidationError("name pattern '" + name_pattern + "' lacks " + field);
    }
}

namespace {

std::string replace_all(std::string text, const std::string& from, const std::string& to) {
    for (auto pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size()))
        text.replace(pos, from.size(), to);
    return text;
}

struct PatternMatcher {
    std::regex regex;
    int layer_group = 0;
    int module_group = 0;
    int factor_group = 0;

    explicit PatternMatcher(const std::string& pattern) {
        static const std::regex placeholder(R"(\{(layer|module|factor)\})");
        static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
        std::string expr;
        int group = 0;
        auto begin = std::sregex_iterator(pattern.begin(), pattern.end(), placeholder);
        std::size_t last = 0;
        for (auto it = begin; it != std::sregex_iterator(); ++it) {
            const auto literal = pattern.substr(last, static_cast<std::size_t>(it->position()) - last);
            expr += std::regex_replace(literal, special, R"(\$&)");
            const std::string field = (*it)[1];
            ++group;
            if (field == "layer") {
                expr += "([0-9]+)";
                layer_group = group;
            } else if (field == "module") {
                expr += "([A-Za-z0-9_]+)";
                module_group = group;
            } else {
                expr += "(A|B)";
                factor_group = group;
            }
            last = static_cast<std::size_t>(it->position() + it->length());
        }
        expr += std::regex_replace(pattern.substr(last), special, R"(\$&)");
        regex = std::regex(expr);
    }
};

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError("cannot write '" + path.string() + "'");
    out << text;
    if (!out)
        throw IoError("error writing '" + path.string() + "'");
}

void ensure_parent(const fs::path& path) {
    const auto parent = path.parent_path();
    if (parent.empty()) return;
    std::error_code ec;
    fs::create_directories(parent, ec);
    if (ec)
        throw IoError("cannot create directory '" + parent.string() + "': " + ec.message());
}

std::string default_task_id(const AdapterFileDescriptor& desc) {
    if (desc.weights_path.filename() == "adapter_model.safetensors" && desc.weights_path.has_parent_path()) {
        const auto dir = fs::absolute(desc.weights_path).parent_path().filename().string();
        if (!dir.empty()) return dir;
    }
    return desc.weights_path.stem().string();
}

template <class Map>
std::vector<std::string> module_names_of(const Map& layers) {
    std::set<std::string> names;
    for (const auto& [key, _] : layers)
        names.insert(key.module_name);
    return {names.begin(), names.end()};
}

}  // namespace

std::string tensor_name(const std::string& pattern, const LayerKey& key, char factor) {
    std::string out = replace_all(pattern, "{layer}", std::to_string(key.layer_index));
    out = replace_all(out, "{module}", key.module_name);
    return replace_all(out, "{factor}", std::string(1, factor));
}

Adapter read_adapter(const AdapterFileDescriptor& desc) {
    desc.validate();
    json config;
    try {
        config = json::parse(read_text(desc.config_path));
    } catch (const json::exception& e) {
        throw IoError(desc.config_path.string() + ": malformed adapter config: " + e.what());
    }
    if (!config.contains("r") || !config["r"].is_number_integer())
        throw ValidationError(desc.config_path.string() + ": config lacks integer field 'r'");
    if (!config.contains("lora_alpha") || !config["lora_alpha"].is_number())
        throw ValidationError(desc.config_path.string() + ": config lacks numeric field 'lora_alpha'");
    const int rank = config["r"].get<int>();
    const double alpha = config["lora_alpha"].get<double>();
    if (rank < 1)
        throw ValidationError(desc.config_path.string() + ": r must be positive");
    std::set<std::string> targets;
    if (config.contains("target_modules") && config["target_modules"].is_array())
        for (const auto& m : config["target_modules"])
            targets.insert(m.get<std::string>());

    const auto container = safetensors::read_file(desc.weights_path);
    const PatternMatcher matcher(desc.name_pattern);

    std::map<LayerKey, Matrix> a_factors;
    std::map<LayerKey, Matrix> b_factors;
    for (const auto& [name, tensor] : container.tensors) {
        std::smatch match;
        if (!std::regex_match(name, match, matcher.regex)) continue;
        const LayerKey key{std::stoi(match[matcher.layer_group]), match[matcher.module_group]};
        if (!targets.empty() && !targets.contains(key.module_name))
            throw ValidationError("tensor '" + name + "' adapts module '" + key.module_name +
                                  "' which is not in target_modules");
        Matrix m = safetensors::to_matrix(tensor, name);
        auto& slot = match[matcher.factor_group] == "A" ? a_factors : b_factors;
        slot.emplace(key, std::move(m));
    }
    if (a_factors.empty() && b_factors.empty())
        throw ValidationError(desc.weights_path.string() + ": no tensors match pattern '" + desc.name_pattern + "'");

    const double scale = alpha / rank;
    std::map<LayerKey, LoraFactorPair> layers;
    for (auto& [key, a] : a_factors) {
        auto it = b_factors.find(key);
        if (it == b_factors.end())
            throw ValidationError("orphan factor: '" + tensor_name(desc.name_pattern, key, 'A') + "' has no B partner");
        Matrix& b = it->second;
        if (a.rows() != rank || b.cols() != rank)
            throw ValidationError("rank mismatch at layer " + key.str() + ": tensors have rank " +
                                  std::to_string(a.rows()) + "/" + std::to_string(b.cols()) + ", config declares r = " +
                                  std::to_string(rank));
        layers.emplace(key, LoraFactorPair(std::move(a), scale * b));
    }
    for (const auto& [key, b] : b_factors) {
        if (!a_factors.contains(key))
            throw ValidationError("orphan factor: '" + tensor_name(desc.name_pattern, key, 'B') + "' has no A partner");
    }

    Metadata metadata = container.metadata;
    metadata["source_lora_alpha"] = json(alpha).dump();
    metadata["source_r"] = std::to_string(rank);
    std::string task_id = config.contains("task_id") && config["task_id"].is_string()
                              ? config["task_id"].get<std::string>()
                              : default_task_id(desc);
    return Adapter(std::move(task_id), std::move(layers), std::move(metadata));
}

namespace {

void write_adapter_with(const Adapter& adapter, const AdapterFileDescriptor& desc, safetensors::DType dtype,
                        const json& extra_config) {
    desc.validate();
    safetensors::Container container;
    container.metadata = adapter.metadata();
    container.metadata["format"] = "pt";
    for (const auto& [key, pair] : adapter.layers()) {
        container.tensors.emplace(tensor_name(desc.name_pattern, key, 'A'), safetensors::from_matrix(pair.a(), dtype));
        container.tensors.emplace(tensor_name(desc.name_pattern, key, 'B'), safetensors::from_matrix(pair.b(), dtype));
    }
    json config = {
        {"peft_type", "LORA"},
        {"task_id", adapter.task_id()},
        {"r", adapter.rank()},
        {"lora_alpha", adapter.rank()},
        {"target_modules", module_names_of(adapter.layers())},
    };
    config.update(extra_config);
    ensure_parent(desc.weights_path);
    ensure_parent(desc.config_path);
    safetensors::write_file(desc.weights_path, container);
    write_text(desc.config_path, config.dump(2) + "\n");
}

}  // namespace

void write_adapter(const Adapter& adapter, const AdapterFileDescriptor& desc, safetensors::DType dtype) {
    write_adapter_with(adapter, desc, dtype, json::object());
}

void write_merged(const MergedUpdate& update, int out_rank, const AdapterFileDescriptor& desc,
                  safetensors::DType dtype) {
    desc.validate();
    if (update.layers.empty())
        throw ValidationError("merged update has no layers; nothing written");
    if (out_rank < 1)
        throw ValidationError("output rank must be positive");
    for (const auto& [key, delta] : update.layers) {
        if (out_rank > std::min(delta.rows(), delta.cols()))
            throw ValidationError("output rank " + std::to_string(out_rank) + " exceeds the dimensions of layer " +
                                  key.str() + " (" + std::to_string(delta.rows()) + "x" + std::to_string(delta.cols()) +
                                  ")");
    }

    std::map<LayerKey, LoraFactorPair> layers;
    json gamma = json::object();
    for (const auto& [key, delta] : update.layers) {
        const auto svd = thin_svd(delta);
        Matrix b = svd.u.leftCols(out_rank) * svd.sigma.head(out_rank).asDiagonal();
        Matrix a = svd.v.leftCols(out_rank).transpose();
        layers.emplace(key, LoraFactorPair(std::move(a), std::move(b)));
    }
    for (const auto& [key, g] : update.provenance.gamma)
        gamma[key.str()] = g;
    const json provenance = {
        {"merger", update.provenance.merger},
        {"calibration_space", update.provenance.calibration_space},
        {"restore_magnitude", update.provenance.restore_magnitude},
        {"gamma_scope", update.provenance.gamma_scope},
        {"gamma", gamma},
    };
    Metadata metadata{{"merge_provenance", provenance.dump()}};
    const Adapter merged("merged", std::move(layers), std::move(metadata));
    write_adapter_with(merged, desc, dtype, json{{"merge_provenance", provenance}});
}

void write_dense_patch(const MergedUpdate& update, const fs::path& path, const std::string& name_pattern,
                       safetensors::DType dtype) {
    if (update.layers.empty())
        throw ValidationError("merged update has no layers; nothing written");
    safetensors::Container container;
    container.metadata["format"] = "pt";
    container.metadata["content"] = "dense merged update";
    container.metadata["merger"] = update.provenance.merger;
    container.metadata["calibration_space"] = update.provenance.calibration_space;
    for (const auto& [key, delta] : update.layers) {
        std::string name = replace_all(name_pattern, "{layer}", std::to_string(key.layer_index));
        name = replace_all(name, "{module}", key.module_name);
        name = replace_all(name, "{factor}", "delta");
        container.tensors.emplace(name, safetensors::from_matrix(delta, dtype));
    }
    ensure_parent(path);
    safetensors::write_file(path, container);
}

}  // namespace pico
