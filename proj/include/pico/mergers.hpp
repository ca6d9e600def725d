#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "pico/core.hpp"

namespace pico {

// lambda * sum_t dW_t
Matrix merge_task_arithmetic(std::span<const Matrix> updates, double lambda);

// Trim to the top ceil(density * n) magnitudes per task, elect a sign per
// coordinate from the trimmed sum, average the agreeing values, scale by lambda.
// A coordinate whose trimmed sum is exactly zero merges to zero.
Matrix merge_ties(std::span<const Matrix> updates, double density, double lambda);

// Per-task truncated SVD, concatenation of singular vectors, polar
// decorrelation of each side, recombination with blockdiag(Sigma_1..Sigma_T).
Matrix merge_tsv(std::span<const Matrix> updates, int per_task_rank);

// Nearest matrix with orthonormal columns (or rows, if wide): P Q^T for M = P D Q^T.
Matrix polar_factor(const Matrix& m);

// Drops each entry with probability drop_rate and rescales survivors by
// 1 / (1 - drop_rate). Deterministic in seed.
Matrix dare_preprocess(const Matrix& update, double drop_rate, std::uint64_t seed);

// Per-(task, layer) DARE seed, keyed by task id so merges are order independent.
std::uint64_t dare_seed(std::uint64_t base_seed, std::string_view task_id, const LayerKey& key);

}  // namespace pico
