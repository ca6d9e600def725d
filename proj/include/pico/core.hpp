#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pico {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Error hierarchy. The CLI maps each class onto a stable exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

// Identifies one adapted module inside one transformer layer.
struct LayerKey {
    int layer_index = 0;
    std::string module_name;

    auto operator<=>(const LayerKey&) const = default;
    bool operator==(const LayerKey&) const = default;

    std::string str() const;
};

// One LoRA factor pair. The adapter's alpha/r scale is already folded into b.
class LoraFactorPair {
public:
    LoraFactorPair(Matrix a, Matrix b);

    const Matrix& a() const { return a_; }
    const Matrix& b() const { return b_; }
    int rank() const { return static_cast<int>(a_.rows()); }
    Eigen::Index d_in() const { return a_.cols(); }
    Eigen::Index d_out() const { return b_.rows(); }

    Matrix delta() const { return b_ * a_; }

private:
    Matrix a_;  // r x d_in
    Matrix b_;  // d_out x r
};

using Metadata = std::map<std::string, std::string>;

class Adapter {
public:
    // Throws ValidationError if layers disagree on rank or the map is empty.
    Adapter(std::string task_id, std::map<LayerKey, LoraFactorPair> layers,
            Metadata metadata = {});

    const std::string& task_id() const { return task_id_; }
    const std::map<LayerKey, LoraFactorPair>& layers() const { return layers_; }
    const Metadata& metadata() const { return metadata_; }
    int rank() const { return rank_; }

    const LoraFactorPair& at(const LayerKey& key) const;

private:
    std::string task_id_;
    std::map<LayerKey, LoraFactorPair> layers_;
    Metadata metadata_;
    int rank_ = 0;
};

struct Violation {
    enum class Kind { EmptySet, DuplicateTaskId, MissingKey, UnexpectedKey, ShapeMismatch, RankMismatch };

    Kind kind;
    std::string task_id;
    std::optional<LayerKey> key;
    std::string message;
};

std::string to_string(Violation::Kind kind);

// Every violation of the set invariants, empty iff the set is well formed.
// Adapter 0 is the reference for keys and shapes.
std::vector<Violation> validate_set(const std::vector<Adapter>& adapters);

class AdapterSet {
public:
    // Throws ValidationError listing every violation.
    explicit AdapterSet(std::vector<Adapter> adapters);

    const std::vector<Adapter>& adapters() const { return adapters_; }
    std::size_t size() const { return adapters_.size(); }
    int task_count() const { return static_cast<int>(adapters_.size()); }
    int rank() const { return adapters_.front().rank(); }
    std::vector<LayerKey> keys() const;

    // Factor pairs of every task at one key, in task order.
    std::vector<const LoraFactorPair*> factors_at(const LayerKey& key) const;
    std::vector<Matrix> deltas_at(const LayerKey& key) const;

private:
    std::vector<Adapter> adapters_;
};

enum class MergerKind { TaskArithmetic, Ties, Tsv };
enum class CalibrationSpace { None, BSpace, ASpace, DeltaSpace };
enum class GammaScope { PerLayer, Global };

std::string to_string(MergerKind kind);
std::string to_string(CalibrationSpace space);
std::string to_string(GammaScope scope);
MergerKind parse_merger(const std::string& text);
CalibrationSpace parse_calibration_space(const std::string& text);
GammaScope parse_gamma_scope(const std::string& text);

struct MergeConfig {
    MergerKind merger = MergerKind::TaskArithmetic;
    CalibrationSpace calibration_space = CalibrationSpace::BSpace;
    bool restore_magnitude = true;
    GammaScope gamma_scope = GammaScope::PerLayer;
    std::optional<double> ta_lambda;  // unset: 1/T
    double ties_density = 0.2;
    double ties_lambda = 1.0;
    std::optional<int> tsv_rank;  // unset ("auto"): adapter rank r
    double dare_drop_rate = 0.0;
    std::uint64_t rng_seed = 0;
    unsigned max_threads = 1;

    // Throws ValidationError on out-of-range parameters.
    void validate() const;
};

struct Provenance {
    std::string merger;
    std::string calibration_space;
    bool restore_magnitude = false;
    std::string gamma_scope;
    std::map<LayerKey, double> gamma;
};

struct MergedUpdate {
    std::map<LayerKey, Matrix> layers;
    Provenance provenance;
};

}  // namespace pico
