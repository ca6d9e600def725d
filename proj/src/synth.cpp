#include "pico/synth.hpp"

#include <cmath>
#include <random>

#include "pico/numerics.hpp"

namespace pico {

void ToySpec::validate() const {
    if (task_count < 1)
        throw ValidationError("toy: task_count must be at least 1");
    if (task_count + 1 > dim_out)
        throw ValidationError("toy: dim_out must be at least task_count + 1");
    if (dim_in < 2)
        throw ValidationError("toy: dim_in must be at least 2");
    if (!(shared_coeff >= 0.0) || !(specific_coeff >= 0.0))
        throw ValidationError("toy: coefficients must be non-negative");
}

ToySet gen_toy(const ToySpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const Matrix u = random_orthonormal(spec.dim_out, spec.task_count + 1, rng);
    const Matrix v = random_orthonormal(spec.dim_in, 2, rng);
    const LayerKey key{0, "q_proj"};

    std::vector<Adapter> adapters;
    for (int t = 0; t < spec.task_count; ++t) {
        Matrix b(spec.dim_out, 2);
        b.col(0) = spec.shared_coeff * u.col(0);
        b.col(1) = spec.specific_coeff * u.col(t + 1);
        Matrix a = spec.random_a_per_task ? Matrix(random_orthonormal(spec.dim_in, 2, rng).transpose())
                                          : Matrix(v.transpose());
        std::map<LayerKey, LoraFactorPair> layers;
        layers.emplace(key, LoraFactorPair(std::move(a), std::move(b)));
        adapters.emplace_back("toy_" + std::to_string(t), std::move(layers),
                              Metadata{{"generator", "toy"}, {"seed", std::to_string(spec.seed)}});
    }
    return ToySet{AdapterSet(std::move(adapters)), u, spec.random_a_per_task ? Matrix() : v, key};
}

void OverlapSpec::validate() const {
    if (task_count < 1 || dim_out < 1 || dim_in < 1 || rank < 1 || num_layers < 1)
        throw ValidationError("overlap set: counts and dimensions must be positive");
    if (rank > dim_in || rank > dim_out)
        throw ValidationError("overlap set: rank exceeds a layer dimension");
    if (!(shared_energy_fraction >= 0.0 && shared_energy_fraction <= 1.0))
        throw ValidationError("overlap set: shared_energy_fraction must lie in [0, 1]");
    if (shared_subspace_dim < 1 || shared_subspace_dim > std::min(dim_out, rank))
        throw ValidationError("overlap set: shared_subspace_dim must lie in [1, min(dim_out, rank)]");
    if (rank + shared_subspace_dim > dim_out)
        throw ValidationError("overlap set: dim_out too small for a specific frame beside the shared frame");
    if (modules.empty())
        throw ValidationError("overlap set: no modules");
}

OverlapSet gen_overlap_set(const OverlapSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const int k = spec.shared_subspace_dim;
    const int r = spec.rank;
    const int T = spec.task_count;
    const bool fits = k + T * r <= spec.dim_out;
    const bool orthogonal = spec.orthogonal_specifics && fits;
    const double rho = spec.shared_energy_fraction;

    std::vector<std::map<LayerKey, LoraFactorPair>> layers(static_cast<std::size_t>(T));
    for (int layer = 0; layer < spec.num_layers; ++layer) {
        for (const auto& module : spec.modules) {
            const LayerKey key{layer, module};
            Matrix frames;
            if (orthogonal)
                frames = random_orthonormal(spec.dim_out, k + T * r, rng);
            else
                frames = random_orthonormal(spec.dim_out, k, rng);
            const Matrix shared = frames.leftCols(k);

            for (int t = 0; t < T; ++t) {
                Matrix specific_frame;
                if (orthogonal) {
                    specific_frame = frames.middleCols(k + t * r, r);
                } else {
                    // random r-frame inside the orthogonal complement of the shared frame
                    Matrix g = random_gaussian(spec.dim_out, r, rng);
                    g -= shared * (shared.transpose() * g);
                    specific_frame = orthonormal_basis(g, Side::Columns);
                }
                Matrix shared_part = shared * random_gaussian(k, r, rng);
                Matrix specific_part = specific_frame * random_gaussian(specific_frame.cols(), r, rng);
                shared_part /= shared_part.norm();
                specific_part /= specific_part.norm();
                Matrix b = std::sqrt(rho) * shared_part + std::sqrt(1.0 - rho) * specific_part;
                Matrix a = random_orthonormal(spec.dim_in, r, rng).transpose();
                layers[static_cast<std::size_t>(t)].emplace(key, LoraFactorPair(std::move(a), std::move(b)));
            }
        }
    }

    std::vector<Adapter> adapters;
    for (int t = 0; t < T; ++t) {
        adapters.emplace_back("task_" + std::to_string(t), std::move(layers[static_cast<std::size_t>(t)]),
                              Metadata{{"generator", "overlap"}, {"seed", std::to_string(spec.seed)}});
    }
    return OverlapSet{AdapterSet(std::move(adapters)), spec.orthogonal_specifics && !fits};
}

std::map<LayerKey, Matrix> oracle_linear_average(const AdapterSet& set) {
    std::map<LayerKey, Matrix> out;
    for (const auto& key : set.keys()) {
        const auto deltas = set.deltas_at(key);
        Matrix sum = Matrix::Zero(deltas.front().rows(), deltas.front().cols());
        for (const auto& d : deltas)
            sum += d;
        out.emplace(key, sum / static_cast<double>(deltas.size()));
    }
    return out;
}

}  // namespace pico
