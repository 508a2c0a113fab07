#include "mammo/tsne.hpp"

#include "mammo/error.hpp"
#include "mammo/parallel.hpp"
#include "mammo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numbers>
#include <numeric>

namespace mammo {

void TsneConfig::validate(std::size_t n) const
{
    if (n < 4)
        throw ConfigError(fmt::format("t-SNE needs at least 4 points, got {}", n));
    if (!(perplexity >= 1.0) || perplexity > static_cast<double>(n - 1))
        throw ConfigError(fmt::format("perplexity {} outside [1, N-1] = [1, {}]", perplexity, n - 1));
    if (iterations < exaggeration_iters)
        throw ConfigError("iterations must be >= exaggeration_iters");
    if (!(learning_rate > 0.0))
        throw ConfigError("learning_rate must be positive");
    if (!(early_exaggeration_factor > 0.0))
        throw ConfigError("early_exaggeration_factor must be positive");
    for (double m : {momentum_initial, momentum_final})
        if (!(m >= 0.0 && m < 1.0))
            throw ConfigError("momentum must lie in [0, 1)");
}

Matrix pairwise_sq_dists(const Matrix& x, unsigned threads)
{
    for (double v : x.data())
        if (!std::isfinite(v))
            throw NumericError("non-finite input to pairwise distances");
    const std::size_t n = x.rows();
    Matrix d(n, n);
    parallel_rows(n, threads, [&](std::size_t i) {
        const auto xi = x.row(i);
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto xj = x.row(j);
            double s = 0.0;
            for (std::size_t k = 0; k < xi.size(); ++k) {
                const double diff = xi[k] - xj[k];
                s += diff * diff;
            }
            d(i, j) = s;
        }
    });
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < i; ++j)
            d(i, j) = d(j, i);
    return d;
}

// ---------------------------------------------------------------- affinities

namespace {

constexpr double kLog2Tolerance = 1e-5;
constexpr int kBisectionSteps = 50;
constexpr int kMaxWidenings = 64;

struct RowEval {
    double entropy_bits;
    std::vector<double> probs;
};

// Distances are shifted by their minimum so the largest weight is exp(0).
RowEval evaluate_row(std::span<const double> shifted, double beta)
{
    RowEval r{0.0, std::vector<double>(shifted.size())};
    double sum = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < shifted.size(); ++j) {
        r.probs[j] = std::exp(-beta * shifted[j]);
        sum += r.probs[j];
        weighted += r.probs[j] * shifted[j];
    }
    for (auto& p : r.probs)
        p /= sum;
    r.entropy_bits = (std::log(sum) + beta * weighted / sum) / std::numbers::ln2;
    return r;
}

} // namespace

ConditionalRow conditional_probs(std::span<const double> dist_row, double perplexity)
{
    if (dist_row.empty())
        throw ConfigError("conditional_probs needs at least one neighbour");
    if (!(perplexity >= 1.0) || perplexity > static_cast<double>(dist_row.size()))
        throw ConfigError(fmt::format("perplexity {} outside [1, {}]", perplexity, dist_row.size()));

    const double dmin = *std::min_element(dist_row.begin(), dist_row.end());
    std::vector<double> shifted(dist_row.size());
    std::transform(dist_row.begin(), dist_row.end(), shifted.begin(), [&](double d) { return d - dmin; });
    const double mean_shift = std::accumulate(shifted.begin(), shifted.end(), 0.0) / shifted.size();

    const double target = std::log2(perplexity);
    auto converged = [&](const RowEval& r) { return std::abs(r.entropy_bits - target) < kLog2Tolerance; };
    auto finish = [](RowEval&& r, double beta) {
        return ConditionalRow{std::move(r.probs), std::sqrt(1.0 / (2.0 * beta))};
    };

    double beta = mean_shift > 0.0 ? 1.0 / mean_shift : 1.0;
    RowEval current = evaluate_row(shifted, beta);
    if (converged(current))
        return finish(std::move(current), beta);

    // Entropy falls as beta grows. Widen geometrically until the target is bracketed.
    double lo, hi;
    if (current.entropy_bits > target) {
        lo = beta;
        hi = beta * 2.0;
        for (int w = 0;; ++w) {
            current = evaluate_row(shifted, hi);
            if (converged(current))
                return finish(std::move(current), hi);
            if (current.entropy_bits < target)
                break;
            if (w + 1 >= kMaxWidenings)
                throw NumericError("perplexity calibration could not bracket the target");
            lo = hi;
            hi *= 2.0;
        }
    } else {
        hi = beta;
        lo = beta / 2.0;
        for (int w = 0;; ++w) {
            current = evaluate_row(shifted, lo);
            if (converged(current))
                return finish(std::move(current), lo);
            if (current.entropy_bits > target)
                break;
            if (w + 1 >= kMaxWidenings)
                throw NumericError("perplexity calibration could not bracket the target");
            hi = lo;
            lo /= 2.0;
        }
    }

    for (int step = 0; step < kBisectionSteps; ++step) {
        beta = 0.5 * (lo + hi);
        current = evaluate_row(shifted, beta);
        if (converged(current))
            break;
        (current.entropy_bits > target ? lo : hi) = beta;
    }
    return finish(std::move(current), beta);
}

Matrix conditional_matrix(const Matrix& sq_dists, double perplexity, unsigned threads)
{
    const std::size_t n = sq_dists.rows();
    Matrix cond(n, n);
    parallel_rows(n, threads, [&](std::size_t i) {
        std::vector<double> row;
        row.reserve(n - 1);
        for (std::size_t j = 0; j < n; ++j)
            if (j != i)
                row.push_back(sq_dists(i, j));
        ConditionalRow r;
        try {
            r = conditional_probs(row, perplexity);
        } catch (const NumericError& e) {
            throw NumericError(fmt::format("row calibration failed: {}", e.what()), i);
        }
        for (std::size_t j = 0, k = 0; j < n; ++j)
            if (j != i)
                cond(i, j) = r.probs[k++];
    });
    return cond;
}

Matrix joint_probs(const Matrix& conditional)
{
    const std::size_t n = conditional.rows();
    Matrix p(n, n);
    const double denom = 2.0 * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double v = std::max((conditional(i, j) + conditional(j, i)) / denom, kProbabilityFloor);
            p(i, j) = v;
            p(j, i) = v;
        }
    return p;
}

LowDimAffinities low_dim_affinities(const Matrix& y, unsigned threads)
{
    const std::size_t n = y.rows();
    LowDimAffinities a{Matrix(n, n), Matrix(n, n), 0.0};
    std::vector<double> row_sums(n, 0.0);
    parallel_rows(n, threads, [&](std::size_t i) {
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i)
                continue;
            const double dx = y(i, 0) - y(j, 0);
            const double dy = y(i, 1) - y(j, 1);
            const double k = 1.0 / (1.0 + dx * dx + dy * dy);
            a.kernel(i, j) = k;
            s += k;
        }
        row_sums[i] = s;
    });
    for (double s : row_sums)
        a.kernel_sum += s;
    const double inv = 1.0 / a.kernel_sum;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (i != j)
                a.q(i, j) = std::max(a.kernel(i, j) * inv, kProbabilityFloor);
    return a;
}

double kl_divergence(const Matrix& p, const Matrix& q)
{
    double kl = 0.0;
    for (std::size_t i = 0; i < p.rows(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < p.cols(); ++j)
            if (i != j)
                row += p(i, j) * std::log(p(i, j) / q(i, j));
        kl += row;
    }
    return kl;
}

namespace {

Matrix gradient_scaled(const Matrix& p, double p_scale, const LowDimAffinities& a, const Matrix& y,
                       unsigned threads)
{
    const std::size_t n = y.rows();
    Matrix grad(n, 2);
    parallel_rows(n, threads, [&](std::size_t i) {
        double gx = 0.0, gy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i)
                continue;
            const double w = (p_scale * p(i, j) - a.q(i, j)) * a.kernel(i, j);
            gx += w * (y(i, 0) - y(j, 0));
            gy += w * (y(i, 1) - y(j, 1));
        }
        grad(i, 0) = 4.0 * gx;
        grad(i, 1) = 4.0 * gy;
    });
    return grad;
}

} // namespace

Matrix tsne_gradient(const Matrix& p, const LowDimAffinities& affinities, const Matrix& y, unsigned threads)
{
    return gradient_scaled(p, 1.0, affinities, y, threads);
}

// ---------------------------------------------------------------- PCA

Matrix pca_reduce(const Matrix& x, std::size_t components, std::uint64_t seed)
{
    const std::size_t n = x.rows(), d = x.cols();
    if (components == 0 || components > d)
        throw ConfigError(fmt::format("PCA components must be in [1, {}]", d));
    Matrix centred = x;
    for (std::size_t k = 0; k < d; ++k) {
        double mean = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            mean += x(i, k);
        mean /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            centred(i, k) -= mean;
    }

    Rng rng(seed);
    std::vector<std::vector<double>> basis;
    auto normalise = [](std::vector<double>& v) {
        double norm = 0.0;
        for (double e : v)
            norm += e * e;
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (auto& e : v)
                e /= norm;
        return norm;
    };
    auto orthogonalise = [&](std::vector<double>& v) {
        for (const auto& b : basis) {
            double dot = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                dot += v[k] * b[k];
            for (std::size_t k = 0; k < d; ++k)
                v[k] -= dot * b[k];
        }
    };
    for (std::size_t c = 0; c < components; ++c) {
        std::vector<double> v(d);
        for (auto& e : v)
            e = rng.normal();
        orthogonalise(v);
        normalise(v);
        // v <- X^T (X v), never forming the covariance.
        for (int it = 0; it < 200; ++it) {
            std::vector<double> xv(n, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < d; ++k)
                    xv[i] += centred(i, k) * v[k];
            std::vector<double> next(d, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t k = 0; k < d; ++k)
                    next[k] += centred(i, k) * xv[i];
            orthogonalise(next);
            if (normalise(next) == 0.0)
                break;
            double change = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                change = std::max(change, std::abs(next[k] - v[k]));
            v = std::move(next);
            if (change < 1e-10)
                break;
        }
        basis.push_back(std::move(v));
    }

    Matrix out(n, components);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < components; ++c) {
            double s = 0.0;
            for (std::size_t k = 0; k < d; ++k)
                s += centred(i, k) * basis[c][k];
            out(i, c) = s;
        }
    return out;
}

// ---------------------------------------------------------------- optimiser

Matrix initial_embedding(std::size_t n, std::uint64_t seed)
{
    Rng rng(seed);
    Matrix y(n, 2);
    for (auto& v : y.data())
        v = rng.normal(0.0, 1e-4);
    return y;
}

namespace {

// One optimisation step's worth of affinity work, fused. Uses the symmetry
// of P and the kernel so each unordered pair is visited once for the kernel
// and the KL term. Matches low_dim_affinities + kl_divergence +
// tsne_gradient up to rounding.
class FusedStep {
public:
    FusedStep(const Matrix& p, unsigned threads)
        : p_(p), n_(p.rows()), threads_(threads), kernel_(n_, n_), row_a_(n_), row_b_(n_)
    {
        for (std::size_t i = 0; i < n_; ++i)
            for (std::size_t j = 0; j < n_; ++j)
                if (i != j)
                    p_log_p_ += p(i, j) * std::log(p(i, j));
    }

    /// Returns KL(P || Q(y)) and writes the gradient with P scaled by `p_scale`.
    double run(const Matrix& y, double p_scale, Matrix& grad)
    {
        parallel_rows(n_, threads_, [&](std::size_t i) {
            double s = 0.0;
            for (std::size_t j = i + 1; j < n_; ++j) {
                const double dx = y(i, 0) - y(j, 0);
                const double dy = y(i, 1) - y(j, 1);
                const double k = 1.0 / (1.0 + dx * dx + dy * dy);
                kernel_(i, j) = k;
                s += k;
            }
            row_a_[i] = s;
        });
        double z = 0.0;
        for (double s : row_a_)
            z += s;
        z *= 2.0;
        const double inv_z = 1.0 / z;
        const double log_floor = std::log(kProbabilityFloor);
        const double log_z = std::log(z);

        parallel_rows(n_, threads_, [&](std::size_t i) {
            double cross = 0.0;
            for (std::size_t j = i + 1; j < n_; ++j) {
                const double k = kernel_(i, j);
                kernel_(j, i) = k;
                const double log_q = k * inv_z >= kProbabilityFloor ? std::log(k) - log_z : log_floor;
                cross += p_(i, j) * log_q;
            }
            row_b_[i] = cross;
        });
        double cross = 0.0;
        for (double c : row_b_)
            cross += c;

        parallel_rows(n_, threads_, [&](std::size_t i) {
            double gx = 0.0, gy = 0.0;
            for (std::size_t j = 0; j < n_; ++j) {
                if (j == i)
                    continue;
                const double k = kernel_(i, j);
                const double q = std::max(k * inv_z, kProbabilityFloor);
                const double w = (p_scale * p_(i, j) - q) * k;
                gx += w * (y(i, 0) - y(j, 0));
                gy += w * (y(i, 1) - y(j, 1));
            }
            grad(i, 0) = 4.0 * gx;
            grad(i, 1) = 4.0 * gy;
        });
        return p_log_p_ - 2.0 * cross;
    }

private:
    const Matrix& p_;
    std::size_t n_;
    unsigned threads_;
    Matrix kernel_;
    std::vector<double> row_a_;
    std::vector<double> row_b_;
    double p_log_p_ = 0.0;
};

} // namespace

Embedding run_tsne(const Matrix& x, const TsneConfig& cfg, std::vector<Label> labels, const Matrix* initial)
{
    const std::size_t n = x.rows();
    cfg.validate(n);
    if (!labels.empty() && labels.size() != n)
        throw ConfigError(fmt::format("{} labels for {} points", labels.size(), n));
    if (initial && (initial->rows() != n || initial->cols() != 2))
        throw ConfigError("initial embedding must be N x 2");

    const Matrix features = cfg.pca_components > 0 ? pca_reduce(x, cfg.pca_components, cfg.rng_seed) : x;
    const Matrix p = joint_probs(conditional_matrix(pairwise_sq_dists(features, cfg.threads), cfg.perplexity,
                                                    cfg.threads));

    Embedding out;
    out.labels = labels.empty() ? std::vector<Label>(n, Label::Unlabeled) : std::move(labels);
    out.kl_trace.reserve(cfg.iterations);
    Matrix y = initial ? *initial : initial_embedding(n, cfg.rng_seed);
    Matrix velocity(n, 2);
    Matrix gains(n, 2, 1.0);
    Matrix grad(n, 2);
    FusedStep step(p, cfg.threads);

    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        const double exaggeration = iter < cfg.exaggeration_iters ? cfg.early_exaggeration_factor : 1.0;
        const double momentum = iter < cfg.momentum_switch_iter ? cfg.momentum_initial : cfg.momentum_final;
        out.kl_trace.push_back(step.run(y, exaggeration, grad));

        for (std::size_t k = 0; k < y.size(); ++k) {
            double& gain = gains.data()[k];
            const double g = grad.data()[k];
            double& v = velocity.data()[k];
            // Gradient and velocity pointing opposite ways means steady descent.
            gain = (g > 0.0) != (v > 0.0) ? gain + 0.2 : gain * 0.8;
            gain = std::max(gain, 0.01);
            v = momentum * v - cfg.learning_rate * gain * g;
            y.data()[k] += v;
        }

        double mx = 0.0, my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            mx += y(i, 0);
            my += y(i, 1);
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            y(i, 0) -= mx;
            y(i, 1) -= my;
            if (!std::isfinite(y(i, 0)) || !std::isfinite(y(i, 1)))
                throw NumericError("t-SNE diverged: non-finite coordinates", iter);
        }
    }
    out.points = std::move(y);
    return out;
}

std::string format_embedding(const Embedding& embedding)
{
    std::string out = "x,y,label\n";
    for (std::size_t i = 0; i < embedding.points.rows(); ++i)
        out += fmt::format("{:.9g},{:.9g},{}\n", embedding.points(i, 0), embedding.points(i, 1),
                           label_token(embedding.labels[i]));
    return out;
}

std::string format_kl_trace(const Embedding& embedding)
{
    std::string out = "iter,kl\n";
    for (std::size_t i = 0; i < embedding.kl_trace.size(); ++i)
        out += fmt::format("{},{:.9g}\n", i + 1, embedding.kl_trace[i]);
    return out;
}

} // namespace mammo
