#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "pico/adapter_io.hpp"
#include "pico/numerics.hpp"
#include "pico/synth.hpp"
#include "support/oracles.hpp"

using namespace pico;
namespace fs = std::filesystem;
namespace st = pico::safetensors;
using nlohmann::json;

namespace {

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("pico_io_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path& path() const { return path_; }

private:
    fs::path path_;
};

// Builds container bytes by hand: 8-byte little-endian length, JSON, data.
std::vector<std::uint8_t> raw_container(const std::string& header, const std::vector<std::uint8_t>& data) {
    std::vector<std::uint8_t> out(8);
    const std::uint64_t n = header.size();
    for (int i = 0; i < 8; ++i)
        out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>((n >> (8 * i)) & 0xff);
    out.insert(out.end(), header.begin(), header.end());
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

std::vector<std::uint8_t> float_bytes(std::initializer_list<float> values) {
    std::vector<std::uint8_t> out(values.size() * 4);
    std::size_t i = 0;
    for (float v : values) {
        std::memcpy(out.data() + 4 * i, &v, 4);
        ++i;
    }
    return out;
}

void write_raw_adapter(const fs::path& dir, const json& config, const st::Container& container) {
    fs::create_directories(dir);
    st::write_file(dir / "adapter_model.safetensors", container);
    std::ofstream(dir / "adapter_config.json") << config.dump();
}

st::Container lora_container(const std::vector<LayerKey>& keys, int rank, int d_out, int d_in, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    st::Container c;
    for (const auto& key : keys) {
        c.tensors[tensor_name(kDefaultNamePattern, key, 'A')] =
            st::from_matrix(oracle::gaussian(rank, d_in, rng), st::DType::F32);
        c.tensors[tensor_name(kDefaultNamePattern, key, 'B')] =
            st::from_matrix(oracle::gaussian(d_out, rank, rng), st::DType::F32);
    }
    return c;
}

}  // namespace

TEST(Safetensors, ParsesHandBuiltContainer) {
    const std::string header =
        R"({"__metadata__":{"format":"pt"},"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,16]},)"
        R"("b":{"dtype":"F32","shape":[1],"data_offsets":[16,20]}})";
    const auto bytes = raw_container(header, float_bytes({1, 2, 3, 4, -0.5f}));
    const auto c = st::parse(bytes);
    ASSERT_EQ(c.tensors.size(), 2u);
    EXPECT_EQ(c.metadata.at("format"), "pt");
    const Matrix w = st::to_matrix(c.tensors.at("w"), "w");
    EXPECT_EQ(w(0, 1), 2.0);  // row-major
    EXPECT_EQ(w(1, 0), 3.0);
    EXPECT_EQ(c.tensors.at("b").values.front(), -0.5);
}

TEST(Safetensors, SerializedBytesFollowTheLayout) {
    st::Container c;
    Matrix m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    c.tensors["z"] = st::from_matrix(m, st::DType::F64);
    c.tensors["a"] = st::from_matrix(Matrix::Constant(1, 1, 7.0), st::DType::F32);
    c.metadata["k"] = "v";
    const auto bytes = st::serialize(c);
    std::uint64_t n = 0;
    for (int i = 7; i >= 0; --i)
        n = (n << 8) | bytes[static_cast<std::size_t>(i)];
    EXPECT_EQ(n % 8, 0u);
    const json header = json::parse(std::string(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(n)));
    // sorted by name: "a" first at offset 0
    EXPECT_EQ(header["a"]["data_offsets"], json::array({0, 4}));
    EXPECT_EQ(header["z"]["data_offsets"], json::array({4, 52}));
    EXPECT_EQ(header["z"]["dtype"], "F64");
    EXPECT_EQ(header["__metadata__"]["k"], "v");
    EXPECT_EQ(bytes.size(), 8 + n + 52);
    double first = 0.0;
    std::memcpy(&first, bytes.data() + 8 + n + 4, 8);
    EXPECT_EQ(first, 1.0);
    const auto back = st::parse(bytes);
    EXPECT_EQ(st::to_matrix(back.tensors.at("z"), "z"), m);
}

TEST(Safetensors, RejectsMalformedContainers) {
    const auto data = float_bytes({1, 2, 3, 4});
    // overlapping offsets
    EXPECT_THROW(st::parse(raw_container(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]},)"
                                         R"("b":{"dtype":"F32","shape":[2],"data_offsets":[4,12]}})",
                                         data)),
                 IoError);
    // gap before the second tensor
    EXPECT_THROW(st::parse(raw_container(R"({"a":{"dtype":"F32","shape":[1],"data_offsets":[0,4]},)"
                                         R"("b":{"dtype":"F32","shape":[2],"data_offsets":[8,16]}})",
                                         data)),
                 IoError);
    // uncovered trailing bytes
    EXPECT_THROW(st::parse(raw_container(R"({"a":{"dtype":"F32","shape":[2],"data_offsets":[0,8]}})", data)),
                 IoError);
    // shape disagrees with byte length
    EXPECT_THROW(st::parse(raw_container(R"({"a":{"dtype":"F32","shape":[3],"data_offsets":[0,16]}})", data)),
                 IoError);
    // unknown dtype
    EXPECT_THROW(st::parse(raw_container(R"({"a":{"dtype":"Q4","shape":[4],"data_offsets":[0,16]}})", data)),
                 IoError);
    // offsets past the end of the buffer
    EXPECT_THROW(st::parse(raw_container(R"({"a":{"dtype":"F32","shape":[8],"data_offsets":[0,32]}})", data)),
                 IoError);
    // truncated: header length points past the end
    auto truncated = raw_container(R"({"a":{"dtype":"F32","shape":[4],"data_offsets":[0,16]}})", data);
    truncated.resize(20);
    EXPECT_THROW(st::parse(truncated), IoError);
    EXPECT_THROW(st::parse(std::vector<std::uint8_t>{1, 2, 3}), IoError);
    // malformed JSON and non-string metadata
    EXPECT_THROW(st::parse(raw_container("{not json", {})), IoError);
    EXPECT_THROW(st::parse(raw_container(R"({"__metadata__":{"x":1}})", {})), IoError);
}

TEST(Safetensors, DecodesHalfPrecision) {
    // 0x3c00 = 1.0, 0xc000 = -2.0, 0x3555 ~ 0.33325, 0x0001 = 2^-24 (subnormal)
    const std::vector<std::uint8_t> f16{0x00, 0x3c, 0x00, 0xc0, 0x55, 0x35, 0x01, 0x00};
    const auto c = st::parse(raw_container(R"({"h":{"dtype":"F16","shape":[4],"data_offsets":[0,8]}})", f16));
    const auto& v = c.tensors.at("h").values;
    EXPECT_EQ(v[0], 1.0);
    EXPECT_EQ(v[1], -2.0);
    EXPECT_NEAR(v[2], 0.333251953125, 1e-12);
    EXPECT_EQ(v[3], std::ldexp(1.0, -24));
    // 0x3f80 = 1.0, 0x4049 ~ 3.140625 in bfloat16
    const std::vector<std::uint8_t> bf16{0x80, 0x3f, 0x49, 0x40};
    const auto b = st::parse(raw_container(R"({"h":{"dtype":"BF16","shape":[2],"data_offsets":[0,4]}})", bf16));
    EXPECT_EQ(b.tensors.at("h").values[0], 1.0);
    EXPECT_EQ(b.tensors.at("h").values[1], 3.140625);
}

TEST(Safetensors, HalfRoundTripIsWithinHalfPrecision) {
    std::mt19937_64 rng(4);
    const Matrix m = oracle::gaussian(5, 7, rng);
    for (auto dtype : {st::DType::F16, st::DType::BF16}) {
        st::Container c;
        c.tensors["m"] = st::from_matrix(m, dtype);
        const Matrix back = st::to_matrix(st::parse(st::serialize(c)).tensors.at("m"), "m");
        const double ulp = dtype == st::DType::F16 ? std::ldexp(1.0, -11) : std::ldexp(1.0, -8);
        EXPECT_LE(((back - m).array().abs() / m.array().abs()).maxCoeff(), ulp) << st::to_string(dtype);
    }
}

TEST(AdapterIo, AlphaOverRankIsFoldedIntoB) {
    TempDir tmp;
    const std::vector<LayerKey> keys{{0, "q_proj"}, {0, "v_proj"}};
    const auto container = lora_container(keys, 8, 12, 10, 1);
    write_raw_adapter(tmp.path() / "doubled", {{"r", 8}, {"lora_alpha", 16}, {"target_modules", {"q_proj", "v_proj"}}},
                      container);
    write_raw_adapter(tmp.path() / "unit", {{"r", 8}, {"lora_alpha", 8}}, container);
    const Adapter doubled = read_adapter(AdapterFileDescriptor::in_directory(tmp.path() / "doubled"));
    const Adapter unit = read_adapter(AdapterFileDescriptor::in_directory(tmp.path() / "unit"));
    EXPECT_EQ(doubled.task_id(), "doubled");
    EXPECT_EQ(doubled.metadata().at("source_r"), "8");
    const auto stored = st::read_file(tmp.path() / "unit" / "adapter_model.safetensors");
    for (const auto& key : keys) {
        const Matrix raw_b = st::to_matrix(stored.tensors.at(tensor_name(kDefaultNamePattern, key, 'B')), "b");
        EXPECT_EQ(unit.at(key).b(), raw_b);
        EXPECT_EQ(doubled.at(key).b(), 2.0 * raw_b);
        EXPECT_EQ(doubled.at(key).a(), unit.at(key).a());
    }
}

TEST(AdapterIo, RoundTripPreservesFactorsAndMetadata) {
    TempDir tmp;
    OverlapSpec spec;
    spec.dim_out = 24;
    spec.dim_in = 20;
    spec.rank = 4;
    spec.num_layers = 2;
    const auto ov = gen_overlap_set(spec);
    const Adapter& original = ov.set.adapters()[1];
    const auto desc = AdapterFileDescriptor::in_directory(tmp.path() / "rt");
    write_adapter(original, desc, st::DType::F64);
    EXPECT_EQ(st::read_file(desc.weights_path).tensors.size(), 8u);
    const Adapter back = read_adapter(desc);
    EXPECT_EQ(back.task_id(), original.task_id());
    EXPECT_EQ(back.metadata().at("generator"), "overlap");
    for (const auto& [key, pair] : original.layers()) {
        EXPECT_EQ(back.at(key).a(), pair.a());
        EXPECT_EQ(back.at(key).b(), pair.b());
    }
    // F32 loses precision but not much
    write_adapter(original, desc);
    const Adapter f32 = read_adapter(desc);
    for (const auto& [key, pair] : original.layers())
        EXPECT_LT(oracle::rel_error(f32.at(key).delta(), pair.delta()), 1e-6);
}

TEST(AdapterIo, WriteMergedRefactorsExactlyAtFullRank) {
    TempDir tmp;
    std::mt19937_64 rng(7);
    MergedUpdate update;
    const Matrix low = oracle::gaussian(30, 5, rng) * oracle::gaussian(5, 20, rng);
    update.layers.emplace(LayerKey{3, "q_proj"}, low);
    update.provenance.merger = "ties";
    update.provenance.gamma[LayerKey{3, "q_proj"}] = 1.25;
    const auto desc = AdapterFileDescriptor::in_directory(tmp.path() / "merged");
    write_merged(update, 5, desc, st::DType::F64);
    const Adapter back = read_adapter(desc);
    EXPECT_EQ(back.rank(), 5);
    EXPECT_LT(oracle::rel_error(back.at(LayerKey{3, "q_proj"}).delta(), low), 1e-12);
    const json config = json::parse(std::ifstream(desc.config_path));
    EXPECT_EQ(config["merge_provenance"]["merger"], "ties");
    EXPECT_EQ(config["merge_provenance"]["gamma"]["3/q_proj"], 1.25);
    EXPECT_NE(back.metadata().at("merge_provenance").find("ties"), std::string::npos);
}

TEST(AdapterIo, WriteMergedTruncationMatchesOracle) {
    TempDir tmp;
    std::mt19937_64 rng(8);
    MergedUpdate update;
    const Matrix full = oracle::gaussian(80, 64, rng);
    update.layers.emplace(LayerKey{0, "v_proj"}, full);
    const auto desc = AdapterFileDescriptor::in_directory(tmp.path() / "trunc");
    write_merged(update, 16, desc, st::DType::F64);
    const Matrix back = read_adapter(desc).at(LayerKey{0, "v_proj"}).delta();
    EXPECT_NEAR((back - full).norm(), oracle::truncation_error(full, 16), 1e-9);
}

TEST(AdapterIo, WriteMergedChecksBeforeWriting) {
    TempDir tmp;
    const auto desc = AdapterFileDescriptor::in_directory(tmp.path() / "never");
    EXPECT_THROW(write_merged(MergedUpdate{}, 4, desc), ValidationError);
    MergedUpdate update;
    update.layers.emplace(LayerKey{0, "q_proj"}, Matrix::Ones(6, 6));
    update.layers.emplace(LayerKey{1, "q_proj"}, Matrix::Ones(6, 3));
    EXPECT_THROW(write_merged(update, 4, desc), ValidationError);
    EXPECT_THROW(write_merged(update, 0, desc), ValidationError);
    EXPECT_FALSE(fs::exists(desc.weights_path));
}

TEST(AdapterIo, DensePatchNamesFollowPattern) {
    TempDir tmp;
    MergedUpdate update;
    update.layers.emplace(LayerKey{2, "v_proj"}, Matrix::Identity(3, 3));
    const auto path = tmp.path() / "patch.safetensors";
    write_dense_patch(update, path);
    const auto c = st::read_file(path);
    ASSERT_EQ(c.tensors.size(), 1u);
    EXPECT_EQ(c.tensors.begin()->first, "base_model.model.model.layers.2.self_attn.v_proj.lora_delta.weight");
}

TEST(AdapterIo, RejectsOrphansAndRankMismatch) {
    TempDir tmp;
    const LayerKey key{0, "q_proj"};
    auto orphan = lora_container({key}, 4, 8, 8, 2);
    orphan.tensors.erase(tensor_name(kDefaultNamePattern, key, 'B'));
    write_raw_adapter(tmp.path() / "orphan", {{"r", 4}, {"lora_alpha", 4}}, orphan);
    try {
        read_adapter(AdapterFileDescriptor::in_directory(tmp.path() / "orphan"));
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("orphan factor"), std::string::npos);
    }
    write_raw_adapter(tmp.path() / "rank", {{"r", 8}, {"lora_alpha", 8}}, lora_container({key}, 4, 8, 8, 3));
    try {
        read_adapter(AdapterFileDescriptor::in_directory(tmp.path() / "rank"));
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("rank mismatch"), std::string::npos);
    }
    write_raw_adapter(tmp.path() / "target", {{"r", 4}, {"lora_alpha", 4}, {"target_modules", {"v_proj"}}},
                      lora_container({key}, 4, 8, 8, 4));
    EXPECT_THROW(read_adapter(AdapterFileDescriptor::in_directory(tmp.path() / "target")), ValidationError);
    EXPECT_THROW(read_adapter(AdapterFileDescriptor::in_directory(tmp.path() / "missing")), IoError);
}

TEST(AdapterIo, CustomNamePattern) {
    TempDir tmp;
    const std::string pattern = "layers.{layer}.{module}.{factor}";
    std::mt19937_64 rng(9);
    std::map<LayerKey, LoraFactorPair> layers;
    layers.emplace(LayerKey{7, "mlp"}, LoraFactorPair(oracle::gaussian(2, 5, rng), oracle::gaussian(4, 2, rng)));
    const Adapter adapter("custom", std::move(layers));
    const auto desc = AdapterFileDescriptor::in_directory(tmp.path() / "c", pattern);
    write_adapter(adapter, desc, st::DType::F64);
    EXPECT_TRUE(st::read_file(desc.weights_path).tensors.contains("layers.7.mlp.A"));
    EXPECT_EQ(read_adapter(desc).at(LayerKey{7, "mlp"}).b(), adapter.at(LayerKey{7, "mlp"}).b());
    EXPECT_THROW(AdapterFileDescriptor::in_directory(tmp.path(), "no.fields").validate(), ValidationError);
}
