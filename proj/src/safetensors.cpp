#include "pico/safetensors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

namespace pico::safetensors {

static_assert(std::endian::native == std::endian::little, "safetensors I/O assumes a little-endian host");

using nlohmann::json;

namespace {

// Upper bound on the JSON header, as in the reference implementation.
constexpr std::uint64_t kMaxHeader = 100'000'000;

float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = (h & 0x8000u) << 16;
    std::uint32_t exponent = (h >> 10) & 0x1fu;
    std::uint32_t mantissa = h & 0x3ffu;
    std::uint32_t bits;
    if (exponent == 0) {
        if (mantissa == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            exponent = 127 - 15 + 1;
            while ((mantissa & 0x400u) == 0) {
                mantissa <<= 1;
                --exponent;
            }
            mantissa &= 0x3ffu;
            bits = sign | (exponent << 23) | (mantissa << 13);
        }
    } else if (exponent == 0x1f) {
        bits = sign | 0x7f800000u | (mantissa << 13);
    } else {
        bits = sign | ((exponent + 127 - 15) << 23) | (mantissa << 13);
    }
    return std::bit_cast<float>(bits);
}

std::uint16_t float_to_half(float value) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
    const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
    const std::uint32_t abs = bits & 0x7fffffffu;
    if (abs >= 0x7f800000u)  // inf or nan
        return static_cast<std::uint16_t>(sign | 0x7c00u | (abs > 0x7f800000u ? 0x200u : 0u));
    if (abs >= 0x477ff000u)  // rounds to >= 65520: overflow
        return static_cast<std::uint16_t>(sign | 0x7c00u);
    if (abs < 0x38800000u) {  // below the smallest normal half
        // subnormal half: round(value * 2^24), ties to even
        const float magnitude = std::bit_cast<float>(abs);
        const auto half = static_cast<std::uint32_t>(std::nearbyint(magnitude * 16777216.0f));
        return static_cast<std::uint16_t>(sign | half);
    }
    std::uint32_t half = ((abs - 0x38000000u) >> 13);
    const std::uint32_t rem = abs & 0x1fffu;
    if (rem > 0x1000u || (rem == 0x1000u && (half & 1u))) ++half;
    return static_cast<std::uint16_t>(sign | half);
}

float bf16_to_float(std::uint16_t h) {
    return std::bit_cast<float>(static_cast<std::uint32_t>(h) << 16);
}

std::uint16_t float_to_bf16(float value) {
    std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
    if ((bits & 0x7fffffffu) > 0x7f800000u)
        return static_cast<std::uint16_t>((bits >> 16) | 0x40u);
    bits += 0x7fffu + ((bits >> 16) & 1u);
    return static_cast<std::uint16_t>(bits >> 16);
}

template <class T>
T load(const std::uint8_t* p) {
    T out;
    std::memcpy(&out, p, sizeof(T));
    return out;
}

template <class T>
void store(std::uint8_t* p, T value) {
    std::memcpy(p, &value, sizeof(T));
}

}  // namespace

std::string to_string(DType dtype) {
    switch (dtype) {
    case DType::F16: return "F16";
    case DType::BF16: return "BF16";
    case DType::F32: return "F32";
    case DType::F64: return "F64";
    }
    return "?";
}

DType parse_dtype(const std::string& text) {
    if (text == "F16") return DType::F16;
    if (text == "BF16") return DType::BF16;
    if (text == "F32") return DType::F32;
    if (text == "F64") return DType::F64;
    throw IoError("unsupported safetensors dtype '" + text + "'");
}

std::size_t element_size(DType dtype) {
    switch (dtype) {
    case DType::F16:
    case DType::BF16: return 2;
    case DType::F32: return 4;
    case DType::F64: return 8;
    }
    return 0;
}

std::size_t Tensor::numel() const {
    std::size_t n = 1;
    for (auto d : shape)
        n *= static_cast<std::size_t>(d);
    return n;
}

Matrix to_matrix(const Tensor& tensor, const std::string& name) {
    if (tensor.shape.size() != 2)
        throw ValidationError("tensor '" + name + "' is not 2-D");
    const auto rows = static_cast<Eigen::Index>(tensor.shape[0]);
    const auto cols = static_cast<Eigen::Index>(tensor.shape[1]);
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        tensor.values.data(), rows, cols);
}

Tensor from_matrix(const Matrix& m, DType dtype) {
    Tensor out;
    out.dtype = dtype;
    out.shape = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
    out.values.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.values.data(), m.rows(),
                                                                                       m.cols()) = m;
    return out;
}

Container parse(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8)
        throw IoError("safetensors: file shorter than the 8-byte header length");
    const auto header_len = load<std::uint64_t>(bytes.data());
    if (header_len > kMaxHeader || header_len > bytes.size() - 8)
        throw IoError("safetensors: header length " + std::to_string(header_len) + " exceeds file size");
    const std::string header(reinterpret_cast<const char*>(bytes.data() + 8), header_len);
    if (header.empty() || header.front() != '{')
        throw IoError("safetensors: header does not start with '{'");

    json doc;
    try {
        doc = json::parse(header);
    } catch (const json::exception& e) {
        throw IoError(std::string("safetensors: malformed header JSON: ") + e.what());
    }
    if (!doc.is_object())
        throw IoError("safetensors: header is not a JSON object");

    const std::uint8_t* buffer = bytes.data() + 8 + header_len;
    const std::uint64_t buffer_size = bytes.size() - 8 - header_len;

    Container out;
    struct Span {
        std::uint64_t begin, end;
        std::string name;
    };
    std::vector<Span> spans;
    for (const auto& [name, entry] : doc.items()) {
        if (name == "__metadata__") {
            if (!entry.is_object())
                throw IoError("safetensors: __metadata__ is not an object");
            for (const auto& [k, v] : entry.items()) {
                if (!v.is_string())
                    throw IoError("safetensors: metadata value for '" + k + "' is not a string");
                out.metadata[k] = v.get<std::string>();
            }
            continue;
        }
        if (!entry.is_object() || !entry.contains("dtype") || !entry.contains("shape") ||
            !entry.contains("data_offsets"))
            throw IoError("safetensors: tensor '" + name + "' lacks dtype/shape/data_offsets");
        Tensor tensor;
        try {
            tensor.dtype = parse_dtype(entry.at("dtype").get<std::string>());
            tensor.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            const auto offsets = entry.at("data_offsets").get<std::vector<std::uint64_t>>();
            if (offsets.size() != 2)
                throw IoError("safetensors: tensor '" + name + "' data_offsets must have two entries");
            spans.push_back({offsets[0], offsets[1], name});
        } catch (const json::exception& e) {
            throw IoError("safetensors: tensor '" + name + "' has a malformed entry: " + e.what());
        }
        for (auto d : tensor.shape)
            if (d < 0) throw IoError("safetensors: tensor '" + name + "' has a negative dimension");
        out.tensors.emplace(name, std::move(tensor));
    }

    std::sort(spans.begin(), spans.end(), [](const Span& x, const Span& y) {
        return x.begin != y.begin ? x.begin < y.begin : x.end < y.end;
    });
    std::uint64_t cursor = 0;
    for (const auto& span : spans) {
        if (span.begin != cursor)
            throw IoError("safetensors: tensor '" + span.name + "' data does not start at " + std::to_string(cursor) +
                          " (overlapping or non-contiguous offsets)");
        if (span.end < span.begin || span.end > buffer_size)
            throw IoError("safetensors: tensor '" + span.name + "' offsets fall outside the data buffer");
        Tensor& tensor = out.tensors.at(span.name);
        const std::size_t width = element_size(tensor.dtype);
        const std::size_t n = tensor.numel();
        if (span.end - span.begin != n * width)
            throw IoError("safetensors: tensor '" + span.name + "' byte length disagrees with its shape");
        tensor.values.resize(n);
        const std::uint8_t* p = buffer + span.begin;
        for (std::size_t i = 0; i < n; ++i, p += width) {
            switch (tensor.dtype) {
            case DType::F16: tensor.values[i] = half_to_float(load<std::uint16_t>(p)); break;
            case DType::BF16: tensor.values[i] = bf16_to_float(load<std::uint16_t>(p)); break;
            case DType::F32: tensor.values[i] = load<float>(p); break;
            case DType::F64: tensor.values[i] = load<double>(p); break;
            }
        }
        cursor = span.end;
    }
    if (cursor != buffer_size)
        throw IoError("safetensors: " + std::to_string(buffer_size - cursor) + " trailing bytes not covered by any tensor");
    return out;
}

std::vector<std::uint8_t> serialize(const Container& container) {
    json header = json::object();
    if (!container.metadata.empty())
        header["__metadata__"] = container.metadata;
    std::uint64_t offset = 0;
    for (const auto& [name, tensor] : container.tensors) {
        if (name == "__metadata__")
            throw ValidationError("safetensors: '__metadata__' is reserved");
        if (tensor.values.size() != tensor.numel())
            throw ValidationError("safetensors: tensor '" + name + "' value count disagrees with its shape");
        const std::uint64_t size = tensor.numel() * element_size(tensor.dtype);
        header[name] = {{"dtype", to_string(tensor.dtype)}, {"shape", tensor.shape}, {"data_offsets", {offset, offset + size}}};
        offset += size;
    }
    std::string text = header.dump();
    text.append((8 - text.size() % 8) % 8, ' ');

    std::vector<std::uint8_t> out(8 + text.size() + offset);
    store<std::uint64_t>(out.data(), text.size());
    std::memcpy(out.data() + 8, text.data(), text.size());
    std::uint8_t* p = out.data() + 8 + text.size();
    for (const auto& [name, tensor] : container.tensors) {
        for (double value : tensor.values) {
            switch (tensor.dtype) {
            case DType::F16: store(p, float_to_half(static_cast<float>(value))); break;
            case DType::BF16: store(p, float_to_bf16(static_cast<float>(value))); break;
            case DType::F32: store(p, static_cast<float>(value)); break;
            case DType::F64: store(p, value); break;
            }
            p += element_size(tensor.dtype);
        }
    }
    return out;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError("error reading '" + path.string() + "'");
    return bytes;
}

Container read_file(const std::filesystem::path& path) {
    try {
        return parse(read_bytes(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void write_file(const std::filesystem::path& path, const Container& container) {
    const auto bytes = serialize(container);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("error writing '" + path.string() + "'");
}

}  // namespace pico::safetensors
