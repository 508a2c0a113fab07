#include "mammo/gan.hpp"

#include "mammo/error.hpp"
#include "mammo/patchio.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>
#include <optional>
#include <sstream>

namespace mammo {

std::string_view activation_token(Activation a)
{
    switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::TanhUnit: return "tanh_unit";
    case Activation::Identity: return "identity";
    }
    return "identity";
}

namespace {

std::optional<Activation> parse_activation(std::string_view token)
{
    for (auto a : {Activation::Relu, Activation::Sigmoid, Activation::TanhUnit, Activation::Identity})
        if (token == activation_token(a))
            return a;
    return std::nullopt;
}

double sigmoid(double x)
{
    if (x >= 0.0)
        return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + e^x) without overflow.
double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double activate(Activation a, double x)
{
    switch (a) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::TanhUnit: return 0.5 * (std::tanh(x) + 1.0);
    case Activation::Identity: return x;
    }
    return x;
}

// Derivative of the activation given pre-activation x and output y.
double activation_slope(Activation a, double x, double y)
{
    switch (a) {
    case Activation::Relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return y * (1.0 - y);
    case Activation::TanhUnit: {
        const double t = 2.0 * y - 1.0;
        return 0.5 * (1.0 - t * t);
    }
    case Activation::Identity: return 1.0;
    }
    return 1.0;
}

struct ForwardCache {
    std::vector<Matrix> inputs; ///< input to each layer
    std::vector<Matrix> pre;    ///< pre-activation of each layer
    Matrix output;
};

ForwardCache forward(const MlpParams& params, const Matrix& x)
{
    if (params.layers.empty())
        throw ConfigError("network has no layers");
    if (x.cols() != params.input_dim())
        throw ConfigError(fmt::format("input has {} columns, network expects {}", x.cols(), params.input_dim()));
    ForwardCache cache;
    Matrix current = x;
    for (const auto& layer : params.layers) {
        const std::size_t out = layer.weight.rows(), in = layer.weight.cols();
        Matrix pre(current.rows(), out);
        Matrix act(current.rows(), out);
        for (std::size_t r = 0; r < current.rows(); ++r) {
            const auto xr = current.row(r);
            for (std::size_t o = 0; o < out; ++o) {
                const auto w = layer.weight.row(o);
                double s = layer.bias[o];
                for (std::size_t i = 0; i < in; ++i)
                    s += w[i] * xr[i];
                pre(r, o) = s;
                act(r, o) = activate(layer.activation, s);
            }
        }
        cache.inputs.push_back(std::move(current));
        cache.pre.push_back(std::move(pre));
        current = std::move(act);
    }
    cache.output = std::move(current);
    return cache;
}

struct BackwardResult {
    MlpParams grads;
    Matrix d_input;
};

// Backpropagates a gradient given with respect to the last layer's
// pre-activation.
BackwardResult backward_from_pre(const MlpParams& params, const ForwardCache& cache, Matrix d_pre)
{
    BackwardResult result{zeros_like(params), {}};
    for (std::size_t l = params.layers.size(); l-- > 0;) {
        const auto& layer = params.layers[l];
        auto& g = result.grads.layers[l];
        const Matrix& input = cache.inputs[l];
        const std::size_t out = layer.weight.rows(), in = layer.weight.cols();
        for (std::size_t r = 0; r < input.rows(); ++r)
            for (std::size_t o = 0; o < out; ++o) {
                const double d = d_pre(r, o);
                if (d == 0.0)
                    continue;
                g.bias[o] += d;
                auto gw = g.weight.row(o);
                const auto xr = input.row(r);
                for (std::size_t i = 0; i < in; ++i)
                    gw[i] += d * xr[i];
            }
        Matrix d_in(input.rows(), in);
        for (std::size_t r = 0; r < input.rows(); ++r)
            for (std::size_t o = 0; o < out; ++o) {
                const double d = d_pre(r, o);
                if (d == 0.0)
                    continue;
                const auto w = layer.weight.row(o);
                auto di = d_in.row(r);
                for (std::size_t i = 0; i < in; ++i)
                    di[i] += d * w[i];
            }
        if (l == 0) {
            result.d_input = std::move(d_in);
            break;
        }
        const auto& below = params.layers[l - 1];
        const Matrix& pre_below = cache.pre[l - 1];
        const Matrix& act_below = cache.inputs[l];
        for (std::size_t k = 0; k < d_in.size(); ++k)
            d_in.data()[k] *= activation_slope(below.activation, pre_below.data()[k], act_below.data()[k]);
        d_pre = std::move(d_in);
    }
    return result;
}

BackwardResult backward_from_output(const MlpParams& params, const ForwardCache& cache, Matrix d_out)
{
    const auto act = params.layers.back().activation;
    for (std::size_t k = 0; k < d_out.size(); ++k)
        d_out.data()[k] *= activation_slope(act, cache.pre.back().data()[k], cache.output.data()[k]);
    return backward_from_pre(params, cache, std::move(d_out));
}

void check_discriminator(const MlpParams& d)
{
    if (d.output_dim() != 1 || d.layers.back().activation != Activation::Sigmoid)
        throw ConfigError("discriminator must end in a single sigmoid unit");
}

// Open-interval probability from a logit; sigmoid rounds to exactly 0 or 1
// beyond |logit| ~ 37.
double open_probability(double logit)
{
    return std::clamp(sigmoid(logit), 0x1.0p-60, 1.0 - 0x1.0p-53);
}

} // namespace

// ---------------------------------------------------------------- MlpParams

std::size_t MlpParams::parameter_count() const
{
    std::size_t n = 0;
    for (const auto& l : layers)
        n += l.weight.size() + l.bias.size();
    return n;
}

double& MlpParams::parameter(std::size_t flat_index)
{
    for (auto& l : layers) {
        if (flat_index < l.weight.size())
            return l.weight.data()[flat_index];
        flat_index -= l.weight.size();
        if (flat_index < l.bias.size())
            return l.bias[flat_index];
        flat_index -= l.bias.size();
    }
    throw ConfigError("parameter index out of range");
}

double MlpParams::parameter(std::size_t flat_index) const
{
    return const_cast<MlpParams*>(this)->parameter(flat_index);
}

void MlpParams::validate() const
{
    if (layers.empty())
        throw ConfigError("network has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        if (layer.weight.rows() == 0 || layer.weight.cols() == 0 || layer.bias.size() != layer.weight.rows())
            throw ConfigError(fmt::format("layer {} has inconsistent shapes", l));
        if (l > 0 && layer.weight.cols() != layers[l - 1].weight.rows())
            throw ConfigError(fmt::format("layer {} input width does not match layer {} output", l, l - 1));
        for (double v : layer.weight.data())
            if (!std::isfinite(v))
                throw ConfigError(fmt::format("layer {} has non-finite weights", l));
        for (double v : layer.bias)
            if (!std::isfinite(v))
                throw ConfigError(fmt::format("layer {} has non-finite biases", l));
    }
}

MlpParams make_mlp(std::size_t input_dim, std::span<const std::size_t> hidden, std::size_t output_dim,
                   Activation output, Rng& rng)
{
    MlpParams p;
    std::size_t in = input_dim;
    auto add = [&](std::size_t out, Activation act) {
        Layer layer{Matrix(out, in), std::vector<double>(out, 0.0), act};
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        for (auto& w : layer.weight.data())
            w = rng.uniform(-bound, bound);
        p.layers.push_back(std::move(layer));
        in = out;
    };
    for (std::size_t width : hidden)
        add(width, Activation::Relu);
    add(output_dim, output);
    p.validate();
    return p;
}

MlpParams zeros_like(const MlpParams& params)
{
    MlpParams z;
    for (const auto& l : params.layers)
        z.layers.push_back({Matrix(l.weight.rows(), l.weight.cols()), std::vector<double>(l.bias.size(), 0.0),
                            l.activation});
    return z;
}

void sgd_update(MlpParams& params, const MlpParams& grad, double learning_rate)
{
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& w = params.layers[l].weight.data();
        const auto& gw = grad.layers[l].weight.data();
        for (std::size_t k = 0; k < w.size(); ++k)
            w[k] -= learning_rate * gw[k];
        auto& b = params.layers[l].bias;
        const auto& gb = grad.layers[l].bias;
        for (std::size_t k = 0; k < b.size(); ++k)
            b[k] -= learning_rate * gb[k];
    }
}

// ---------------------------------------------------------------- forward passes

void GanConfig::validate() const
{
    if (latent_dim < 1 || batch_size < 1)
        throw ConfigError("latent_dim and batch_size must be at least 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be positive");
    for (const auto* widths : {&generator_hidden, &discriminator_hidden})
        for (std::size_t w : *widths)
            if (w < 1)
                throw ConfigError("hidden layer widths must be at least 1");
}

Matrix sample_latent(Rng& rng, std::size_t n, std::size_t dim)
{
    Matrix z(n, dim);
    for (auto& v : z.data())
        v = rng.normal();
    return z;
}

Matrix generator_forward(const MlpParams& generator, const Matrix& z) { return forward(generator, z).output; }

std::vector<double> discriminator_forward(const MlpParams& discriminator, const Matrix& x)
{
    check_discriminator(discriminator);
    const ForwardCache cache = forward(discriminator, x);
    std::vector<double> out(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r)
        out[r] = open_probability(cache.pre.back()(r, 0));
    return out;
}

// ---------------------------------------------------------------- losses

LossGrads discriminator_loss(const MlpParams& generator, const MlpParams& discriminator, const Matrix& real,
                             const Matrix& z)
{
    check_discriminator(discriminator);
    const ForwardCache g_cache = forward(generator, z);
    const ForwardCache real_cache = forward(discriminator, real);
    const ForwardCache fake_cache = forward(discriminator, g_cache.output);

    const std::size_t n_real = real.rows(), n_fake = z.rows();
    LossGrads out;
    Matrix d_real(n_real, 1), d_fake(n_fake, 1);
    double loss_real = 0.0, loss_fake = 0.0, sum_real = 0.0, sum_fake = 0.0;
    for (std::size_t r = 0; r < n_real; ++r) {
        const double s = real_cache.pre.back()(r, 0);
        loss_real += softplus(-s); // -log D(x)
        d_real(r, 0) = (sigmoid(s) - 1.0) / static_cast<double>(n_real);
        sum_real += open_probability(s);
    }
    for (std::size_t r = 0; r < n_fake; ++r) {
        const double s = fake_cache.pre.back()(r, 0);
        loss_fake += softplus(s); // -log(1 - D(G(z)))
        d_fake(r, 0) = sigmoid(s) / static_cast<double>(n_fake);
        sum_fake += open_probability(s);
    }
    out.loss = loss_real / n_real + loss_fake / n_fake;
    out.d_real_mean = sum_real / n_real;
    out.d_fake_mean = sum_fake / n_fake;

    auto through_real = backward_from_pre(discriminator, real_cache, std::move(d_real));
    auto through_fake = backward_from_pre(discriminator, fake_cache, std::move(d_fake));
    out.discriminator = std::move(through_real.grads);
    sgd_update(out.discriminator, through_fake.grads, -1.0); // adds the fake-batch term
    out.generator = backward_from_output(generator, g_cache, std::move(through_fake.d_input)).grads;
    return out;
}

LossGrads generator_loss(const MlpParams& generator, const MlpParams& discriminator, const Matrix& z)
{
    check_discriminator(discriminator);
    const ForwardCache g_cache = forward(generator, z);
    const ForwardCache fake_cache = forward(discriminator, g_cache.output);
    const std::size_t n = z.rows();
    LossGrads out;
    Matrix d_fake(n, 1);
    double loss = 0.0, sum = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const double s = fake_cache.pre.back()(r, 0);
        loss += softplus(-s); // -log D(G(z))
        d_fake(r, 0) = (sigmoid(s) - 1.0) / static_cast<double>(n);
        sum += open_probability(s);
    }
    out.loss = loss / n;
    out.d_fake_mean = sum / n;
    auto through_d = backward_from_pre(discriminator, fake_cache, std::move(d_fake));
    out.discriminator = std::move(through_d.grads);
    out.generator = backward_from_output(generator, g_cache, std::move(through_d.d_input)).grads;
    return out;
}

TraceEntry gan_train_step(MlpParams& generator, MlpParams& discriminator, const Matrix& real_batch,
                          const GanConfig& cfg, Rng& rng, std::size_t step)
{
    if (real_batch.rows() != cfg.batch_size)
        throw ConfigError(fmt::format("real batch has {} rows, batch_size is {}", real_batch.rows(), cfg.batch_size));
    const Matrix z = sample_latent(rng, cfg.batch_size, cfg.latent_dim);

    TraceEntry entry;
    entry.step = step;
    const LossGrads d = discriminator_loss(generator, discriminator, real_batch, z);
    if (!std::isfinite(d.loss))
        throw NumericError("non-finite discriminator loss", step);
    entry.d_loss = d.loss;
    entry.d_real_mean = d.d_real_mean;
    entry.d_fake_mean = d.d_fake_mean;
    sgd_update(discriminator, d.discriminator, cfg.learning_rate);

    const LossGrads g = generator_loss(generator, discriminator, z);
    if (!std::isfinite(g.loss))
        throw NumericError("non-finite generator loss", step);
    entry.g_loss = g.loss;
    sgd_update(generator, g.generator, cfg.learning_rate);
    return entry;
}

double gradient_check(const MlpParams& params, const std::function<double(const MlpParams&)>& loss,
                      const MlpParams& analytic, double epsilon, std::size_t max_coords, std::uint64_t seed)
{
    const std::size_t total = params.parameter_count();
    std::vector<std::size_t> coords(total);
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords > 0 && max_coords < total) {
        Rng rng(seed);
        for (std::size_t i = 0; i < max_coords; ++i)
            std::swap(coords[i], coords[i + rng.below(total - i)]);
        coords.resize(max_coords);
    }
    MlpParams probe = params;
    double worst = 0.0;
    for (std::size_t k : coords) {
        const double keep = probe.parameter(k);
        probe.parameter(k) = keep + epsilon;
        const double up = loss(probe);
        probe.parameter(k) = keep - epsilon;
        const double down = loss(probe);
        probe.parameter(k) = keep;
        const double numeric = (up - down) / (2.0 * epsilon);
        const double exact = analytic.parameter(k);
        const double err = std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), 1e-8});
        worst = std::max(worst, err);
    }
    return worst;
}

// ---------------------------------------------------------------- training

GanModel init_gan(const GanConfig& cfg, std::size_t data_dim, int sample_width, int sample_height)
{
    cfg.validate();
    if (data_dim == 0)
        throw ConfigError("data dimension must be positive");
    if (sample_width <= 0 || sample_height <= 0 ||
        static_cast<std::size_t>(sample_width) * static_cast<std::size_t>(sample_height) != data_dim)
        throw ConfigError("sample shape must cover the data dimension");
    Rng rng(cfg.rng_seed);
    GanModel m;
    m.config = cfg;
    m.data_dim = data_dim;
    m.sample_width = sample_width;
    m.sample_height = sample_height;
    m.generator = make_mlp(cfg.latent_dim, cfg.generator_hidden, data_dim, Activation::TanhUnit, rng);
    m.discriminator = make_mlp(data_dim, cfg.discriminator_hidden, 1, Activation::Sigmoid, rng);
    return m;
}

std::vector<TraceEntry> train_gan(GanModel& model, const RealSampler& sample_real)
{
    // Separate streams for the data and for the latent draws.
    Rng data_rng(model.config.rng_seed ^ 0x9E3779B97F4A7C15ULL);
    Rng latent_rng(model.config.rng_seed + 1);
    std::vector<TraceEntry> trace;
    trace.reserve(model.config.steps);
    for (std::size_t step = 0; step < model.config.steps; ++step) {
        const Matrix real = sample_real(data_rng, model.config.batch_size);
        trace.push_back(gan_train_step(model.generator, model.discriminator, real, model.config, latent_rng, step));
    }
    return trace;
}

Matrix GaussianMixture2D::sample(Rng& rng, std::size_t n) const
{
    Matrix out(n, 2);
    for (std::size_t r = 0; r < n; ++r) {
        const auto& mu = means[rng.below(means.size())];
        out(r, 0) = std::clamp(rng.normal(mu[0], stddev), 0.0, 1.0);
        out(r, 1) = std::clamp(rng.normal(mu[1], stddev), 0.0, 1.0);
    }
    return out;
}

std::string format_trace(std::span<const TraceEntry> trace)
{
    std::string out = "step,d_loss,g_loss,d_real_mean,d_fake_mean\n";
    for (const auto& t : trace)
        out += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g}\n", t.step, t.d_loss, t.g_loss, t.d_real_mean,
                           t.d_fake_mean);
    return out;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr std::string_view kCheckpointMagic = "GANCKPT1";

std::string join_widths(const std::vector<std::size_t>& widths)
{
    std::string out;
    for (std::size_t i = 0; i < widths.size(); ++i)
        out += (i ? "," : "") + std::to_string(widths[i]);
    return out.empty() ? "-" : out;
}

std::vector<std::size_t> split_widths(const std::string& text)
{
    std::vector<std::size_t> out;
    if (text == "-")
        return out;
    std::stringstream in(text);
    std::string part;
    while (std::getline(in, part, ','))
        out.push_back(std::stoul(part));
    return out;
}

void describe(std::string& out, std::string_view name, const MlpParams& net)
{
    out += fmt::format("{} {}\n", name, net.layers.size());
    for (const auto& l : net.layers)
        out += fmt::format("layer {} {} {}\n", l.weight.rows(), l.weight.cols(), activation_token(l.activation));
}

} // namespace

std::vector<std::uint8_t> save_checkpoint(const GanModel& model)
{
    const auto& c = model.config;
    std::string header(kCheckpointMagic);
    header += '\n';
    header += fmt::format("latent_dim {}\nbatch_size {}\nlearning_rate {:.17g}\nsteps {}\nrng_seed {}\n", c.latent_dim,
                          c.batch_size, c.learning_rate, c.steps, c.rng_seed);
    header += fmt::format("generator_hidden {}\ndiscriminator_hidden {}\n", join_widths(c.generator_hidden),
                          join_widths(c.discriminator_hidden));
    header += fmt::format("data_dim {}\nsample_shape {} {}\n", model.data_dim, model.sample_width, model.sample_height);
    describe(header, "generator", model.generator);
    describe(header, "discriminator", model.discriminator);
    header += "end\n";

    std::vector<std::uint8_t> out(header.begin(), header.end());
    for (const auto* net : {&model.generator, &model.discriminator})
        for (const auto& l : net->layers) {
            const auto w = write_f32raw(l.weight);
            out.insert(out.end(), w.begin(), w.end());
            const auto b = write_f32raw(Matrix(1, l.bias.size(), l.bias));
            out.insert(out.end(), b.begin(), b.end());
        }
    return out;
}

GanModel load_checkpoint(std::span<const std::uint8_t> bytes)
{
    std::size_t pos = 0;
    auto next_line = [&]() -> std::string {
        const std::size_t start = pos;
        while (pos < bytes.size() && bytes[pos] != '\n')
            ++pos;
        if (pos == bytes.size())
            throw ParseError("unterminated checkpoint header", start);
        std::string line(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos));
        ++pos;
        return line;
    };
    if (next_line() != kCheckpointMagic)
        throw ParseError("checkpoint magic mismatch, expected GANCKPT1", 0);

    GanModel m;
    auto expect_key = [&](std::string_view key) {
        const std::size_t at = pos;
        const std::string line = next_line();
        std::istringstream in(line);
        std::string k;
        in >> k;
        if (k != key)
            throw ParseError(fmt::format("expected \"{}\" in checkpoint header, got \"{}\"", key, line), at);
        std::string rest;
        std::getline(in, rest);
        if (!rest.empty() && rest.front() == ' ')
            rest.erase(0, 1);
        return std::make_pair(rest, at);
    };
    auto number = [&](std::string_view key) {
        const auto [v, at] = expect_key(key);
        try {
            std::size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size())
                throw std::invalid_argument(v);
            return d;
        } catch (const std::exception&) {
            throw ParseError(fmt::format("bad value for {}", key), at);
        }
    };
    try {
        m.config.latent_dim = static_cast<std::size_t>(number("latent_dim"));
        m.config.batch_size = static_cast<std::size_t>(number("batch_size"));
        m.config.learning_rate = number("learning_rate");
        m.config.steps = static_cast<std::size_t>(number("steps"));
        m.config.rng_seed = std::stoull(expect_key("rng_seed").first);
        m.config.generator_hidden = split_widths(expect_key("generator_hidden").first);
        m.config.discriminator_hidden = split_widths(expect_key("discriminator_hidden").first);
        m.data_dim = static_cast<std::size_t>(number("data_dim"));
        {
            std::istringstream in(expect_key("sample_shape").first);
            in >> m.sample_width >> m.sample_height;
        }
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(std::string("malformed checkpoint header: ") + e.what(), pos);
    }

    auto read_layout = [&](std::string_view name, MlpParams& net) {
        const auto [count_text, at] = expect_key(name);
        const auto count = std::stoul(count_text);
        for (std::size_t i = 0; i < count; ++i) {
            const auto [layer_line, layer_at] = expect_key("layer");
            std::istringstream in(layer_line);
            std::size_t rows = 0, cols = 0;
            std::string act;
            in >> rows >> cols >> act;
            const auto a = parse_activation(act);
            if (!in || !a || rows == 0 || cols == 0)
                throw ParseError("malformed layer line \"" + layer_line + "\"", layer_at);
            net.layers.push_back({Matrix(rows, cols), std::vector<double>(rows), *a});
        }
    };
    read_layout("generator", m.generator);
    read_layout("discriminator", m.discriminator);
    if (next_line() != "end")
        throw ParseError("missing end of checkpoint header", pos);

    for (auto* net : {&m.generator, &m.discriminator})
        for (auto& l : net->layers) {
            const std::size_t at = pos;
            Matrix w = read_f32raw(bytes, pos);
            Matrix b = read_f32raw(bytes, pos);
            if (w.rows() != l.weight.rows() || w.cols() != l.weight.cols() || b.size() != l.bias.size())
                throw ParseError("tensor shape does not match header", at);
            l.weight = std::move(w);
            l.bias = std::move(b.data());
        }
    try {
        m.config.validate();
        m.generator.validate();
        m.discriminator.validate();
    } catch (const ConfigError& e) {
        throw ParseError(std::string("inconsistent checkpoint: ") + e.what(), pos);
    }
    if (m.generator.input_dim() != m.config.latent_dim || m.generator.output_dim() != m.data_dim ||
        m.discriminator.input_dim() != m.data_dim ||
        static_cast<std::size_t>(std::max(m.sample_width, 0)) * static_cast<std::size_t>(std::max(m.sample_height, 0)) !=
            m.data_dim)
        throw ParseError("checkpoint shapes disagree with its header", pos);
    return m;
}

} // namespace mammo
