#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pico/core.hpp"

namespace pico::safetensors {

enum class DType { F16, BF16, F32, F64 };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& text);
std::size_t element_size(DType dtype);

// One tensor of a container. Values are held as row-major doubles regardless
// of the stored width.
struct Tensor {
    DType dtype = DType::F32;
    std::vector<std::int64_t> shape;
    std::vector<double> values;

    std::size_t numel() const;
};

// A 2-D tensor viewed as a matrix.
Matrix to_matrix(const Tensor& tensor, const std::string& name);
Tensor from_matrix(const Matrix& m, DType dtype);

struct Container {
    std::map<std::string, Tensor> tensors;
    std::map<std::string, std::string> metadata;
};

// Parses a whole container held in memory. Throws IoError on any violation of
// the format: truncated header, malformed JSON, out-of-range, overlapping or
// non-contiguous data offsets, size/shape disagreement, unknown dtype.
Container parse(const std::vector<std::uint8_t>& bytes);

// Serializes tensors sorted by name, data contiguous in that order, header
// padded with spaces to a multiple of 8 bytes.
std::vector<std::uint8_t> serialize(const Container& container);

Container read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const Container& container);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);

}  // namespace pico::safetensors
