#include "pico/core.hpp"

#include <set>
#include <sstream>

namespace pico {

std::string LayerKey::str() const {
    return std::to_string(layer_index) + "/" + module_name;
}

LoraFactorPair::LoraFactorPair(Matrix a, Matrix b) : a_(std::move(a)), b_(std::move(b)) {
    if (a_.rows() < 1)
        throw ValidationError("LoRA factor A must have at least one row");
    if (b_.cols() != a_.rows()) {
        std::ostringstream msg;
        msg << "rank mismatch: A is " << a_.rows() << "x" << a_.cols() << " but B is " << b_.rows()
            << "x" << b_.cols();
        throw ValidationError(msg.str());
    }
}

Adapter::Adapter(std::string task_id, std::map<LayerKey, LoraFactorPair> layers, Metadata metadata)
    : task_id_(std::move(task_id)), layers_(std::move(layers)), metadata_(std::move(metadata)) {
    if (layers_.empty())
        throw ValidationError("adapter '" + task_id_ + "' has no layers");
    rank_ = layers_.begin()->second.rank();
    for (const auto& [key, pair] : layers_) {
        if (pair.rank() != rank_) {
            throw ValidationError("adapter '" + task_id_ + "' mixes ranks: " + key.str() + " has rank " +
                                  std::to_string(pair.rank()) + ", expected " + std::to_string(rank_));
        }
    }
}

const LoraFactorPair& Adapter::at(const LayerKey& key) const {
    auto it = layers_.find(key);
    if (it == layers_.end())
        throw ValidationError("adapter '" + task_id_ + "' has no layer " + key.str());
    return it->second;
}

std::string to_string(Violation::Kind kind) {
    switch (kind) {
    case Violation::Kind::EmptySet: return "empty set";
    case Violation::Kind::DuplicateTaskId: return "duplicate task id";
    case Violation::Kind::MissingKey: return "missing key";
    case Violation::Kind::UnexpectedKey: return "unexpected key";
    case Violation::Kind::ShapeMismatch: return "shape mismatch";
    case Violation::Kind::RankMismatch: return "rank mismatch";
    }
    return "unknown";
}

std::vector<Violation> validate_set(const std::vector<Adapter>& adapters) {
    std::vector<Violation> out;
    if (adapters.empty()) {
        out.push_back({Violation::Kind::EmptySet, "", std::nullopt, "adapter set is empty"});
        return out;
    }

    std::set<std::string> seen;
    for (const auto& adapter : adapters) {
        if (!seen.insert(adapter.task_id()).second) {
            out.push_back({Violation::Kind::DuplicateTaskId, adapter.task_id(), std::nullopt,
                           "task id '" + adapter.task_id() + "' appears more than once"});
        }
    }

    const Adapter& ref = adapters.front();
    for (std::size_t i = 1; i < adapters.size(); ++i) {
        const Adapter& other = adapters[i];
        if (other.rank() != ref.rank()) {
            out.push_back({Violation::Kind::RankMismatch, other.task_id(), std::nullopt,
                           "rank " + std::to_string(other.rank()) + " differs from " +
                               std::to_string(ref.rank())});
        }
        for (const auto& [key, pair] : ref.layers()) {
            auto it = other.layers().find(key);
            if (it == other.layers().end()) {
                out.push_back({Violation::Kind::MissingKey, other.task_id(), key,
                               "missing layer " + key.str()});
                continue;
            }
            const auto& theirs = it->second;
            if (theirs.d_out() != pair.d_out() || theirs.d_in() != pair.d_in()) {
                std::ostringstream msg;
                msg << "layer " << key.str() << " has shape " << theirs.d_out() << "x" << theirs.d_in()
                    << ", expected " << pair.d_out() << "x" << pair.d_in();
                out.push_back({Violation::Kind::ShapeMismatch, other.task_id(), key, msg.str()});
            }
        }
        for (const auto& [key, pair] : other.layers()) {
            if (!ref.layers().contains(key)) {
                out.push_back({Violation::Kind::UnexpectedKey, other.task_id(), key,
                               "layer " + key.str() + " is not adapted by '" + ref.task_id() + "'"});
            }
        }
    }
    return out;
}

AdapterSet::AdapterSet(std::vector<Adapter> adapters) : adapters_(std::move(adapters)) {
    auto violations = validate_set(adapters_);
    if (!violations.empty()) {
        std::ostringstream msg;
        msg << "invalid adapter set (" << violations.size() << " violation"
            << (violations.size() == 1 ? "" : "s") << ")";
        for (const auto& v : violations)
            msg << "; " << to_string(v.kind) << ": " << v.message
                << (v.task_id.empty() ? "" : " [" + v.task_id + "]");
        throw ValidationError(msg.str());
    }
}

std::vector<LayerKey> AdapterSet::keys() const {
    std::vector<LayerKey> out;
    for (const auto& [key, _] : adapters_.front().layers())
        out.push_back(key);
    return out;
}

std::vector<const LoraFactorPair*> AdapterSet::factors_at(const LayerKey& key) const {
    std::vector<const LoraFactorPair*> out;
    out.reserve(adapters_.size());
    for (const auto& adapter : adapters_)
        out.push_back(&adapter.at(key));
    return out;
}

std::vector<Matrix> AdapterSet::deltas_at(const LayerKey& key) const {
    std::vector<Matrix> out;
    out.reserve(adapters_.size());
    for (const auto& adapter : adapters_)
        out.push_back(adapter.at(key).delta());
    return out;
}

std::string to_string(MergerKind kind) {
    switch (kind) {
    case MergerKind::TaskArithmetic: return "task-arithmetic";
    case MergerKind::Ties: return "ties";
    case MergerKind::Tsv: return "tsv-m";
    }
    return "unknown";
}

std::string to_string(CalibrationSpace space) {
    switch (space) {
    case CalibrationSpace::None: return "none";
    case CalibrationSpace::BSpace: return "b-space";
    case CalibrationSpace::ASpace: return "a-space";
    case CalibrationSpace::DeltaSpace: return "delta-space";
    }
    return "unknown";
}

std::string to_string(GammaScope scope) {
    return scope == GammaScope::PerLayer ? "per-layer" : "global";
}

MergerKind parse_merger(const std::string& text) {
    if (text == "ta" || text == "task-arithmetic") return MergerKind::TaskArithmetic;
    if (text == "ties") return MergerKind::Ties;
    if (text == "tsv" || text == "tsv-m") return MergerKind::Tsv;
    throw ValidationError("unknown merger '" + text + "'");
}

CalibrationSpace parse_calibration_space(const std::string& text) {
    if (text == "none") return CalibrationSpace::None;
    if (text == "b" || text == "b-space") return CalibrationSpace::BSpace;
    if (text == "a" || text == "a-space") return CalibrationSpace::ASpace;
    if (text == "delta" || text == "delta-space") return CalibrationSpace::DeltaSpace;
    throw ValidationError("unknown calibration space '" + text + "'");
}

GammaScope parse_gamma_scope(const std::string& text) {
    if (text == "per-layer" || text == "layer") return GammaScope::PerLayer;
    if (text == "global") return GammaScope::Global;
    throw ValidationError("unknown gamma scope '" + text + "'");
}

void MergeConfig::validate() const {
    if (ta_lambda && !(*ta_lambda > 0.0))
        throw ValidationError("ta_lambda must be positive");
    if (!(ties_density > 0.0 && ties_density <= 1.0))
        throw ValidationError("ties_density must lie in (0, 1]");
    if (!(ties_lambda > 0.0))
        throw ValidationError("ties_lambda must be positive");
    if (tsv_rank && *tsv_rank < 1)
        throw ValidationError("tsv_rank must be at least 1");
    if (!(dare_drop_rate >= 0.0 && dare_drop_rate < 1.0))
        throw ValidationError("dare_drop_rate must lie in [0, 1)");
    if (max_threads < 1)
        throw ValidationError("max_threads must be at least 1");
}

}  // namespace pico
