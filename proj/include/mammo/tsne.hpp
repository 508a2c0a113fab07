#pragma once

#include "mammo/matrix.hpp"
#include "mammo/patchio.hpp"

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mammo {

/// Exact t-SNE settings. Perplexity and iteration defaults follow the
/// 3 x 500 patch experiment; the optimiser knobs are the classic defaults.
struct TsneConfig {
    double perplexity = 250.0;
    std::size_t iterations = 4000;
    double early_exaggeration_factor = 4.0;
    std::size_t exaggeration_iters = 100;
    double learning_rate = 100.0;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    std::size_t momentum_switch_iter = 250;
    std::uint64_t rng_seed = 0;
    /// 0 disables the optional PCA pre-reduction.
    std::size_t pca_components = 0;
    unsigned threads = 1;

    /// Throws ConfigError if the settings cannot be run on `n` points.
    void validate(std::size_t n) const;
};

struct Embedding {
    Matrix points; ///< N x 2
    std::vector<Label> labels;
    std::vector<double> kl_trace; ///< One entry per iteration, against the un-exaggerated P.
};

inline constexpr double kProbabilityFloor = 1e-12;

/// Squared Euclidean distances, computed as sum (x_i - x_j)^2 per pair.
/// Throws NumericError on non-finite input.
Matrix pairwise_sq_dists(const Matrix& x, unsigned threads = 1);

struct ConditionalRow {
    std::vector<double> probs;
    double sigma = 0.0;
};

/// Gaussian conditional probabilities for one point given its squared
/// distances to the N-1 others, with sigma calibrated by bisection so the
/// row's perplexity (2^entropy) matches `perplexity`.
ConditionalRow conditional_probs(std::span<const double> dist_row, double perplexity);

/// conditional_probs for every row of a full distance matrix (diagonal
/// skipped). Calibration failures name the row.
Matrix conditional_matrix(const Matrix& sq_dists, double perplexity, unsigned threads = 1);

/// (p_j|i + p_i|j) / 2N with off-diagonal entries floored at 1e-12.
Matrix joint_probs(const Matrix& conditional);

struct LowDimAffinities {
    Matrix q;           ///< normalised, floored, zero diagonal
    Matrix kernel;      ///< (1 + |y_i - y_j|^2)^-1, zero diagonal
    double kernel_sum = 0.0;
};

LowDimAffinities low_dim_affinities(const Matrix& y, unsigned threads = 1);

/// Sum over i != j of p_ij ln(p_ij / q_ij).
double kl_divergence(const Matrix& p, const Matrix& q);

/// dKL/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j) kernel_ij.
Matrix tsne_gradient(const Matrix& p, const LowDimAffinities& affinities, const Matrix& y,
                     unsigned threads = 1);

/// Projects centred rows onto the top-k principal directions, found by power
/// iteration with deflation.
Matrix pca_reduce(const Matrix& x, std::size_t components, std::uint64_t seed);

/// Initial coordinates: i.i.d. normal(0, 1e-4) from cfg.rng_seed.
Matrix initial_embedding(std::size_t n, std::uint64_t seed);

/// Full optimisation. `initial`, when given, replaces the seeded start.
/// Throws NumericError with the iteration index if coordinates diverge.
Embedding run_tsne(const Matrix& x, const TsneConfig& cfg, std::vector<Label> labels = {},
                   const Matrix* initial = nullptr);

/// "x,y,label" rows after a header line.
std::string format_embedding(const Embedding& embedding);
/// "iter,kl" rows after a header line.
std::string format_kl_trace(const Embedding& embedding);

} // namespace mammo
