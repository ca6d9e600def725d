#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "pico/core.hpp"
#include "pico/safetensors.hpp"

namespace pico {

inline constexpr const char* kDefaultNamePattern =
    "base_model.model.model.layers.{layer}.self_attn.{module}.lora_{factor}.weight";

// Where an adapter lives on disk and how its tensors are named.
//
// The name pattern must contain {layer}, {module} and {factor}; {factor}
// expands to "A" or "B".
struct AdapterFileDescriptor {
    std::filesystem::path weights_path;
    std::filesystem::path config_path;
    std::string name_pattern = kDefaultNamePattern;

    // adapter_model.safetensors + adapter_config.json inside `dir`
    static AdapterFileDescriptor in_directory(const std::filesystem::path& dir,
                                              std::string name_pattern = kDefaultNamePattern);

    void validate() const;
};

std::string tensor_name(const std::string& pattern, const LayerKey& key, char factor);

// Reads an adapter and folds lora_alpha / r into every B factor. The original
// alpha and r are recorded in the adapter metadata ("source_lora_alpha",
// "source_r"). Tensors that do not match the name pattern are ignored.
Adapter read_adapter(const AdapterFileDescriptor& desc);

// Writes factors as stored (scale already absorbed) with lora_alpha = r.
void write_adapter(const Adapter& adapter, const AdapterFileDescriptor& desc,
                   safetensors::DType dtype = safetensors::DType::F32);

// Refactors each merged dW as B' = U_k diag(sigma_k), A' = V_k^T and writes
// it as a rank-out_rank adapter. All ranks are checked before anything is
// written.
void write_merged(const MergedUpdate& update, int out_rank, const AdapterFileDescriptor& desc,
                  safetensors::DType dtype = safetensors::DType::F32);

// Dense dW tensors named by the pattern with {factor} = "delta".
void write_dense_patch(const MergedUpdate& update, const std::filesystem::path& path,
                       const std::string& name_pattern = kDefaultNamePattern,
                       safetensors::DType dtype = safetensors::DType::F32);

}  // namespace pico
