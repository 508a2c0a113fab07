#pragma once

#include "mammo/matrix.hpp"
#include "mammo/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mammo {

enum class Activation {
    Relu,
    Sigmoid,
    TanhUnit, ///< (tanh(x) + 1) / 2, lands in [0,1]
    Identity,
};

std::string_view activation_token(Activation a);

struct Layer {
    Matrix weight; ///< out x in
    std::vector<double> bias;
    Activation activation = Activation::Identity;
};

/// Fully-connected network parameters. Parameters can also be addressed as
/// one flat vector: each layer's weights (row-major) then its bias.
struct MlpParams {
    std::vector<Layer> layers;

    std::size_t input_dim() const { return layers.front().weight.cols(); }
    std::size_t output_dim() const { return layers.back().weight.rows(); }
    std::size_t parameter_count() const;
    double& parameter(std::size_t flat_index);
    double parameter(std::size_t flat_index) const;

    /// Throws ConfigError if layers do not chain or values are non-finite.
    void validate() const;
};

/// Hidden ReLU layers of the given widths, then an `output` layer. Weights
/// uniform in +-1/sqrt(fan_in), biases zero.
MlpParams make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t output_dim,
                   Activation output, Rng& rng);

/// Same shapes, every value zero.
MlpParams zeros_like(const MlpParams& params);

/// params -= learning_rate * grad
void sgd_update(MlpParams& params, const MlpParams& grad, double learning_rate);

struct GanConfig {
    std::size_t latent_dim = 200;
    std::size_t batch_size = 64;
    std::vector<std::size_t> generator_hidden{32};
    std::vector<std::size_t> discriminator_hidden{32};
    double learning_rate = 0.2;
    std::size_t steps = 5000;
    std::uint64_t rng_seed = 1;

    void validate() const;
};

/// n x dim standard normal draws.
Matrix sample_latent(Rng& rng, std::size_t n, std::size_t dim);

/// Rows of samples in [0,1]. Throws ConfigError on a width mismatch.
Matrix generator_forward(const MlpParams& generator, const Matrix& z);

/// Probability of "real" per row, strictly inside (0,1).
std::vector<double> discriminator_forward(const MlpParams& discriminator, const Matrix& x);

/// A loss value together with its gradient for both networks.
struct LossGrads {
    double loss = 0.0;
    MlpParams generator;
    MlpParams discriminator;
    double d_real_mean = 0.0;
    double d_fake_mean = 0.0;
};

/// -[mean log D(real) + mean log(1 - D(G(z)))]
LossGrads discriminator_loss(const MlpParams& generator, const MlpParams& discriminator, const Matrix& real,
                             const Matrix& z);

/// Non-saturating generator loss: -mean log D(G(z))
LossGrads generator_loss(const MlpParams& generator, const MlpParams& discriminator, const Matrix& z);

struct TraceEntry {
    std::size_t step = 0;
    double d_loss = 0.0; ///< before the discriminator update
    double g_loss = 0.0; ///< against the updated discriminator
    double d_real_mean = 0.0;
    double d_fake_mean = 0.0;
    friend bool operator==(const TraceEntry&, const TraceEntry&) = default;
};

/// One discriminator SGD step then one generator SGD step on the same
/// latent batch. Throws NumericError carrying `step` on a non-finite loss.
TraceEntry gan_train_step(MlpParams& generator, MlpParams& discriminator, const Matrix& real_batch,
                          const GanConfig& cfg, Rng& rng, std::size_t step);

/// Max over checked coordinates of |analytic - central difference| /
/// max(|analytic|, |central difference|, 1e-8). `max_coords` of 0 checks
/// every coordinate; otherwise that many are sampled with `seed`.
double gradient_check(const MlpParams& params, const std::function<double(const MlpParams&)>& loss,
                      const MlpParams& analytic, double epsilon = 1e-4, std::size_t max_coords = 0,
                      std::uint64_t seed = 0);

/// Trained generator/discriminator pair plus what is needed to sample from it.
struct GanModel {
    GanConfig config;
    std::size_t data_dim = 0;
    int sample_width = 0; ///< sample_width * sample_height == data_dim
    int sample_height = 0;
    MlpParams generator;
    MlpParams discriminator;
};

GanModel init_gan(const GanConfig& cfg, std::size_t data_dim, int sample_width, int sample_height);

using RealSampler = std::function<Matrix(Rng&, std::size_t)>;

/// Runs cfg.steps training steps, drawing real batches from `sample_real`.
std::vector<TraceEntry> train_gan(GanModel& model, const RealSampler& sample_real);

/// Two-dimensional Gaussian mixture with equal weights, used as a toy target.
struct GaussianMixture2D {
    std::vector<std::array<double, 2>> means{{0.25, 0.25}, {0.75, 0.75}};
    double stddev = 0.05;

    Matrix sample(Rng& rng, std::size_t n) const;
};

/// "step,d_loss,g_loss,d_real_mean,d_fake_mean" rows after a header line.
std::string format_trace(std::span<const TraceEntry> trace);

/// "GANCKPT1" text header with shapes and activations, then each layer's
/// weight and bias as f32raw blocks (generator first).
std::vector<std::uint8_t> save_checkpoint(const GanModel& model);
/// Throws ParseError on a bad magic line or malformed tensors.
GanModel load_checkpoint(std::span<const std::uint8_t> bytes);

} // namespace mammo
