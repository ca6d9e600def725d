#pragma once

#include <cstdint>

#include "pico/core.hpp"

namespace pico {

// Repeated-counting toy: dW_t = a u_0 v_1^T + b u_t v_2^T as rank-2 LoRA
// factors B_t = [a u_0, b u_t], A_t = [v_1; v_2].
struct ToySpec {
    int task_count = 4;
    int dim_out = 16;
    int dim_in = 16;
    double shared_coeff = 1.0;    // a
    double specific_coeff = 1.0;  // b
    std::uint64_t seed = 0;
    // Draw independent A rows per task instead of one shared pair (O_A ~ 0 regime).
    bool random_a_per_task = false;

    void validate() const;
};

struct ToySet {
    AdapterSet set;
    Matrix u;  // dim_out x (T + 1): u_0, u_1..u_T
    Matrix v;  // dim_in x 2 (shared A rows); empty when random_a_per_task
    LayerKey key;
};

ToySet gen_toy(const ToySpec& spec);

// B_t = sqrt(rho) * B_shared M_t + sqrt(1 - rho) * B_spec_t, each term scaled
// to unit Frobenius norm so the shared fraction of ||B_t||_F^2 is exactly rho.
struct OverlapSpec {
    int task_count = 4;
    int dim_out = 256;
    int dim_in = 256;
    int rank = 16;
    double shared_energy_fraction = 0.7;  // rho
    int shared_subspace_dim = 2;          // k
    int num_layers = 1;
    std::vector<std::string> modules{"q_proj", "v_proj"};
    // Orthogonal specific frames when they fit in dim_out; otherwise (or when
    // false) independent random specific frames.
    bool orthogonal_specifics = true;
    std::uint64_t seed = 0;

    void validate() const;
};

struct OverlapSet {
    AdapterSet set;
    bool specifics_fell_back = false;  // requested orthogonal frames did not fit
};

OverlapSet gen_overlap_set(const OverlapSpec& spec);

// Entrywise mean of the dense updates at every layer.
std::map<LayerKey, Matrix> oracle_linear_average(const AdapterSet& set);

}  // namespace pico
