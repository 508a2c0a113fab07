#include "mammo/cli.hpp"

#include "mammo/fixtures.hpp"
#include "mammo/gan.hpp"
#include "mammo/study_http.hpp"
#include "mammo/studysvc.hpp"
#include "mammo/tsne.hpp"
#include "mammo/viz.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <charconv>
#include <csignal>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <ostream>
#include <pthread.h>
#include <thread>

namespace mammo::cli {

namespace fs = std::filesystem;

std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text)
{
    std::vector<std::pair<std::string, std::string>> out;
    const auto trim = [](std::string_view s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string_view::npos)
            return std::string_view{};
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ConfigError(fmt::format("config line {}: expected key=value", line_no));
        const auto key = trim(line.substr(0, eq));
        if (key.empty())
            throw ConfigError(fmt::format("config line {}: empty key", line_no));
        out.emplace_back(std::string(key), std::string(trim(line.substr(eq + 1))));
    }
    return out;
}

namespace {

std::string env_or(const char* name, const std::string& fallback)
{
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

fs::path data_dir()
{
    return env_or("BENCH_DATA_DIR", "data");
}

std::string default_manifest()
{
    return env_or("BENCH_MANIFEST", (data_dir() / "patches" / "manifest.csv").string());
}

std::string default_log()
{
    return env_or("BENCH_LOG", (data_dir() / "study" / "events.jsonl").string());
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void ensure_parent(const fs::path& file)
{
    if (file.has_parent_path())
        ensure_dir(file.parent_path());
}

template <typename T>
T parse_number(const std::string& key, const std::string& text)
{
    T v{};
    const char* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError(fmt::format("{}: '{}' is not a valid number", key, text));
    return v;
}

std::vector<std::size_t> parse_sizes(const std::string& key, const std::string& text)
{
    std::vector<std::size_t> out;
    if (text.empty() || text == "-")
        return out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t comma = std::min(text.find(',', start), text.size());
        out.push_back(parse_number<std::size_t>(key, text.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

/// Loads an image file, naming it in any error.
Patch load_pgm(const fs::path& path)
{
    try {
        return read_pgm(read_file(path.string()));
    } catch (const ParseError& e) {
        throw IoError(fmt::format("{}: {}", path.string(), e.what()));
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

Manifest load_manifest_file(const fs::path& path)
{
    try {
        return load_manifest(read_text_file(path.string()));
    } catch (const ConfigError& e) {
        throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
    }
}

// ---------------------------------------------------------------- settings

/// A config key that can come from a key=value file or from a flag.
struct Setting {
    std::string key;
    std::string help;
    std::function<void(const std::string&)> set;
};

template <typename T>
Setting number_setting(std::string key, std::string help, T& field)
{
    return {key, std::move(help), [key, &field](const std::string& v) { field = parse_number<T>(key, v); }};
}

std::vector<Setting> tsne_settings(TsneConfig& c)
{
    return {
        number_setting("perplexity", "target perplexity", c.perplexity),
        number_setting("iterations", "gradient-descent iterations", c.iterations),
        number_setting("exaggeration", "early exaggeration factor", c.early_exaggeration_factor),
        number_setting("exaggeration_iters", "iterations with exaggeration", c.exaggeration_iters),
        number_setting("learning_rate", "learning rate", c.learning_rate),
        number_setting("momentum_initial", "momentum before the switch", c.momentum_initial),
        number_setting("momentum_final", "momentum after the switch", c.momentum_final),
        number_setting("momentum_switch_iter", "iteration of the momentum switch", c.momentum_switch_iter),
        number_setting("seed", "initialisation seed", c.rng_seed),
        number_setting("pca_components", "PCA pre-reduction (0 = off)", c.pca_components),
    };
}

std::vector<Setting> gan_settings(GanConfig& c)
{
    auto sizes = [](std::string key, std::string help, std::vector<std::size_t>& field) {
        return Setting{key, std::move(help), [key, &field](const std::string& v) { field = parse_sizes(key, v); }};
    };
    return {
        number_setting("latent_dim", "latent vector length", c.latent_dim),
        number_setting("batch_size", "samples per step", c.batch_size),
        sizes("generator_hidden", "generator hidden widths, comma separated", c.generator_hidden),
        sizes("discriminator_hidden", "discriminator hidden widths, comma separated", c.discriminator_hidden),
        number_setting("learning_rate", "SGD learning rate", c.learning_rate),
        number_setting("steps", "training steps", c.steps),
        number_setting("seed", "initialisation and sampling seed", c.rng_seed),
    };
}

/// Registers --config plus one flag per setting; apply() gives flags
/// precedence over the file.
class SettingFlags {
public:
    SettingFlags(CLI::App& app, std::vector<Setting> settings) : settings_(std::move(settings))
    {
        app.add_option("--config", config_path_, "key=value file; flags take precedence");
        for (const auto& s : settings_) {
            std::string flag = "--" + s.key;
            std::replace(flag.begin(), flag.end(), '_', '-');
            options_.push_back(app.add_option(flag, values_.emplace_back(), s.help));
        }
    }

    void apply() const
    {
        if (!config_path_.empty()) {
            for (const auto& [key, value] : parse_key_values(read_text_file(config_path_))) {
                auto it = std::find_if(settings_.begin(), settings_.end(), [&](const Setting& s) { return s.key == key; });
                if (it == settings_.end())
                    throw ConfigError(fmt::format("{}: unknown key '{}'", config_path_, key));
                it->set(value);
            }
        }
        for (std::size_t i = 0; i < settings_.size(); ++i)
            if (options_[i]->count() > 0)
                settings_[i].set(values_[i]);
    }

private:
    std::vector<Setting> settings_;
    std::deque<std::string> values_;
    std::vector<CLI::Option*> options_;
    std::string config_path_;
};

// ---------------------------------------------------------------- commands

struct Context {
    std::ostream& out;
    std::ostream& err;
    unsigned threads = 1;
};

class Command {
public:
    virtual ~Command() = default;
    virtual int execute(Context& ctx) = 0;

    CLI::App* sub = nullptr;
};

class FixturesCmd : public Command {
public:
    explicit FixturesCmd(CLI::App& app)
    {
        sub = app.add_subcommand("fixtures", "generate synthetic source images and a manifest");
        sub->add_option("--out", out_, "output directory")->capture_default_str();
        sub->add_option("--per-class", opt_.per_class, "images per label")->capture_default_str();
        sub->add_option("--image-size", opt_.image_size, "source image side in pixels")->capture_default_str();
        sub->add_option("--seed", opt_.seed, "generator seed")->capture_default_str();
    }

    int execute(Context& ctx) override
    {
        const Manifest m = write_fixtures(out_, opt_);
        fmt::print(ctx.out, "wrote {} images and {}\n", m.entries.size(), (fs::path(out_) / "manifest.csv").string());
        return kExitOk;
    }

private:
    std::string out_ = (data_dir() / "fixtures").string();
    FixtureOptions opt_;
};

class IngestCmd : public Command {
public:
    explicit IngestCmd(CLI::App& app)
    {
        sub = app.add_subcommand("ingest", "crop, equalise and export patches listed in a manifest");
        sub->add_option("--manifest", manifest_, "manifest of source images")->capture_default_str();
        sub->add_option("--out", out_, "output directory")->capture_default_str();
        sub->add_option("--size", size_, "patch side in pixels")->capture_default_str();
        sub->add_option("--bins", bins_, "histogram bins for equalisation")->capture_default_str();
        sub->add_option("--feature-factor", factor_, "block-average factor for features.f32")->capture_default_str();
    }

    int execute(Context& ctx) override
    {
        const fs::path manifest_path = manifest_;
        const Manifest in = load_manifest_file(manifest_path);
        if (in.entries.empty())
            throw ConfigError(manifest_path.string() + ": no entries");
        const fs::path out = out_;
        ensure_dir(out / "patches");

        Manifest written;
        std::vector<double> features;
        std::size_t dim = 0;
        std::string labels;
        for (std::size_t i = 0; i < in.entries.size(); ++i) {
            const auto& e = in.entries[i];
            const fs::path src = manifest_path.parent_path() / e.path;
            const Patch image = load_pgm(src);
            const Point c = e.center.value_or(Point{image.width() / 2, image.height() / 2});
            Patch patch = [&] {
                try {
                    return histogram_equalize(extract_patch(image, c, size_, e.label), bins_);
                } catch (const ConfigError& err) {
                    throw ConfigError(fmt::format("{}: {}", src.string(), err.what()));
                }
            }();
            const std::string rel = fmt::format("patches/{:04}_{}.pgm", i, fs::path(e.path).stem().string());
            write_file((out / rel).string(), write_pgm(patch));
            written.entries.push_back({rel, e.label, std::nullopt});

            const Patch f = block_average(patch, factor_);
            dim = f.pixels().size();
            features.insert(features.end(), f.pixels().begin(), f.pixels().end());
            labels += std::string(label_token(e.label)) + "\n";
        }
        write_text_file((out / "manifest.csv").string(), format_manifest(written));
        write_file((out / "features.f32").string(), write_f32raw(Matrix(in.entries.size(), dim, std::move(features))));
        write_text_file((out / "labels.txt").string(), labels);

        std::string summary;
        for (Label l : {Label::RealLesion, Label::SyntheticLesion, Label::Normal, Label::Unlabeled}) {
            const std::size_t n = written.count(l);
            if (n > 0 || l != Label::Unlabeled)
                summary += fmt::format("{}{}:{}", summary.empty() ? "" : " ", label_token(l), n);
        }
        ctx.out << summary << "\n";
        return kExitOk;
    }

private:
    std::string manifest_ = (data_dir() / "fixtures" / "manifest.csv").string();
    std::string out_ = (data_dir() / "patches").string();
    int size_ = 128;
    int bins_ = 256;
    int factor_ = 4;
};

std::vector<Label> load_labels(const fs::path& path)
{
    std::vector<Label> labels;
    const std::string text = read_text_file(path.string());
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        ++line_no;
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos)
            nl = text.size();
        std::string_view tok(text.data() + pos, nl - pos);
        if (!tok.empty() && tok.back() == '\r')
            tok.remove_suffix(1);
        pos = nl + 1;
        if (tok.empty())
            continue;
        const auto l = parse_label(tok);
        if (!l)
            throw ConfigError(fmt::format("{} line {}: unknown label '{}'", path.string(), line_no, tok));
        labels.push_back(*l);
    }
    return labels;
}

class TsneCmd : public Command {
public:
    explicit TsneCmd(CLI::App& app)
    {
        sub = app.add_subcommand("tsne", "embed a feature matrix in 2-D and plot it");
        sub->add_option("--features", features_, "f32raw matrix, one row per sample")->capture_default_str();
        sub->add_option("--labels", labels_, "one label token per line")->capture_default_str();
        sub->add_option("--out", out_, "output directory")->capture_default_str();
        flags_ = std::make_unique<SettingFlags>(*sub, tsne_settings(cfg_));
    }

    int execute(Context& ctx) override
    {
        flags_->apply();
        cfg_.threads = ctx.threads;
        const Matrix x = read_f32raw(read_file(features_));
        std::vector<Label> labels = load_labels(labels_);
        if (labels.size() != x.rows())
            throw ConfigError(fmt::format("{} rows but {} labels", x.rows(), labels.size()));
        cfg_.validate(x.rows());

        const Embedding e = run_tsne(x, cfg_, std::move(labels));
        const fs::path out = out_;
        ensure_dir(out);
        write_text_file((out / "embedding.csv").string(), format_embedding(e));
        write_text_file((out / "kl_trace.csv").string(), format_kl_trace(e));
        write_text_file((out / "scatter.svg").string(), scatter_svg(e));
        fmt::print(ctx.out, "embedded {} points; final KL {:.6f}\n", x.rows(), e.kl_trace.back());
        return kExitOk;
    }

private:
    std::string features_ = (data_dir() / "patches" / "features.f32").string();
    std::string labels_ = (data_dir() / "patches" / "labels.txt").string();
    std::string out_ = (data_dir() / "tsne").string();
    TsneConfig cfg_;
    std::unique_ptr<SettingFlags> flags_;
};

class GanTrainCmd : public Command {
public:
    explicit GanTrainCmd(CLI::App& app)
    {
        sub = app.add_subcommand("gan-train", "train the GAN on real lesion patches or the 2-D toy mixture");
        sub->add_option("--manifest", manifest_, "train on real_lesion patches from this manifest (default: toy)");
        sub->add_option("--downsample", factor_, "block-average factor applied to patches")->capture_default_str();
        sub->add_option("--out", out_, "output directory")->capture_default_str();
        flags_ = std::make_unique<SettingFlags>(*sub, gan_settings(cfg_));
    }

    int execute(Context& ctx) override
    {
        flags_->apply();
        cfg_.validate();
        RealSampler sampler;
        GanModel model;
        if (manifest_.empty()) {
            model = init_gan(cfg_, 2, 2, 1);
            sampler = [mix = GaussianMixture2D{}](Rng& rng, std::size_t n) { return mix.sample(rng, n); };
        } else {
            const fs::path mpath = manifest_;
            const Manifest m = load_manifest_file(mpath);
            std::vector<Patch> patches;
            for (const auto& e : m.entries)
                if (e.label == Label::RealLesion)
                    patches.push_back(block_average(load_pgm(mpath.parent_path() / e.path), factor_));
            if (patches.empty())
                throw ConfigError(mpath.string() + ": no real_lesion entries to train on");
            const int w = patches[0].width(), h = patches[0].height();
            Matrix data(patches.size(), static_cast<std::size_t>(w) * h);
            for (std::size_t i = 0; i < patches.size(); ++i) {
                if (patches[i].width() != w || patches[i].height() != h)
                    throw ConfigError("training patches differ in size");
                std::copy(patches[i].pixels().begin(), patches[i].pixels().end(), data.row(i).begin());
            }
            model = init_gan(cfg_, data.cols(), w, h);
            sampler = [data = std::move(data)](Rng& rng, std::size_t n) {
                Matrix batch(n, data.cols());
                for (std::size_t i = 0; i < n; ++i) {
                    const auto src = data.row(rng.below(data.rows()));
                    std::copy(src.begin(), src.end(), batch.row(i).begin());
                }
                return batch;
            };
        }
        const auto trace = train_gan(model, sampler);
        const fs::path out = out_;
        ensure_dir(out);
        write_file((out / "checkpoint.gan").string(), save_checkpoint(model));
        write_text_file((out / "trace.csv").string(), format_trace(trace));
        fmt::print(ctx.out, "trained {} steps; final d_loss {:.6f} g_loss {:.6f}\n", trace.size(), trace.back().d_loss,
                   trace.back().g_loss);
        return kExitOk;
    }

private:
    std::string manifest_;
    int factor_ = 1;
    std::string out_ = (data_dir() / "gan").string();
    GanConfig cfg_;
    std::unique_ptr<SettingFlags> flags_;
};

class GanSampleCmd : public Command {
public:
    explicit GanSampleCmd(CLI::App& app)
    {
        sub = app.add_subcommand("gan-sample", "draw generated patches from a checkpoint");
        sub->add_option("--checkpoint", checkpoint_, "GANCKPT1 file")->capture_default_str();
        sub->add_option("-n,--count", n_, "number of samples")->capture_default_str();
        sub->add_option("--seed", seed_, "latent seed")->capture_default_str();
        sub->add_option("--out", out_, "output directory")->capture_default_str();
    }

    int execute(Context& ctx) override
    {
        if (n_ == 0)
            throw ConfigError("sample count must be positive");
        const GanModel model = load_checkpoint(read_file(checkpoint_));
        Rng rng(seed_);
        const Matrix x = generator_forward(model.generator, sample_latent(rng, n_, model.config.latent_dim));
        const fs::path out = out_;
        ensure_dir(out);
        Manifest m;
        std::string csv;
        for (std::size_t i = 0; i < n_; ++i) {
            const auto row = x.row(i);
            const std::string rel = fmt::format("sample_{:04}.pgm", i);
            write_file((out / rel).string(),
                       write_pgm(Patch(model.sample_width, model.sample_height, {row.begin(), row.end()},
                                       Label::SyntheticLesion)));
            m.entries.push_back({rel, Label::SyntheticLesion, std::nullopt});
            csv += fmt::format("{:.9g}\n", fmt::join(row, ","));
        }
        write_text_file((out / "manifest.csv").string(), format_manifest(m));
        write_text_file((out / "samples.csv").string(), csv);
        fmt::print(ctx.out, "wrote {} samples of {}x{} to {}\n", n_, model.sample_width, model.sample_height, out_);
        return kExitOk;
    }

private:
    std::string checkpoint_ = (data_dir() / "gan" / "checkpoint.gan").string();
    std::size_t n_ = 16;
    std::uint64_t seed_ = 0;
    std::string out_ = (data_dir() / "gan" / "samples").string();
};

/// "item_id,truth,level" rows; the header line is optional.
std::vector<Rating> load_ratings(const fs::path& path)
{
    std::vector<Rating> out;
    const std::string text = read_text_file(path.string());
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        ++line_no;
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string::npos)
            nl = text.size();
        std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || (line_no == 1 && line.rfind("item_id,", 0) == 0))
            continue;
        const auto c1 = line.find(','), c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos || line.find(',', c2 + 1) != std::string::npos)
            throw ConfigError(fmt::format("{} line {}: expected item_id,truth,level", path.string(), line_no));
        const auto truth = parse_truth(line.substr(c1 + 1, c2 - c1 - 1));
        const auto level = parse_level(line.substr(c2 + 1));
        if (!truth || !level)
            throw ConfigError(fmt::format("{} line {}: bad truth or level", path.string(), line_no));
        out.push_back({line.substr(0, c1), *truth, *level, "", 0});
    }
    return out;
}

/// Replays a log and returns the named session.
StudySession session_from_log(const std::string& log, const std::string& session_id, std::ostream& err)
{
    const ReplayResult r = replay_log(read_text_file(log));
    for (const auto& w : r.warnings)
        err << "warning: " << w << "\n";
    auto it = r.state.sessions.find(session_id);
    if (it == r.state.sessions.end())
        throw StudyError(StudyError::Kind::NotFound, "unknown session " + session_id);
    return it->second;
}

StudyError not_complete(const StudySession& s)
{
    return StudyError(StudyError::Kind::NotReady, fmt::format("session {} is not complete ({} of {} rated)",
                                                              s.session_id, s.cursor, s.items.size()));
}

class PlotRocCmd : public Command {
public:
    explicit PlotRocCmd(CLI::App& app)
    {
        sub = app.add_subcommand("plot-roc", "ROC curve SVG from ratings or a completed session");
        auto* ratings = sub->add_option("--ratings", ratings_, "CSV of item_id,truth,level");
        auto* session = sub->add_option("--session", session_, "session id in the event log");
        sub->add_option("--log", log_, "event log")->capture_default_str();
        sub->add_option("--out", out_, "SVG path")->capture_default_str();
        ratings->excludes(session);
    }

    int execute(Context& ctx) override
    {
        std::vector<Rating> ratings;
        if (!ratings_.empty()) {
            ratings = load_ratings(ratings_);
        } else if (!session_.empty()) {
            const StudySession s = session_from_log(log_, session_, ctx.err);
            if (s.status != SessionStatus::Complete)
                throw not_complete(s);
            ratings = s.ratings;
        } else {
            throw ConfigError("plot-roc needs --ratings or --session");
        }
        const RocReport report = make_report(ratings);
        ensure_parent(out_);
        write_text_file(out_, roc_svg(report));
        ctx.out << format_report(report);
        return kExitOk;
    }

private:
    std::string ratings_;
    std::string session_;
    std::string log_ = default_log();
    std::string out_ = (data_dir() / "roc.svg").string();
};

class MontageCmd : public Command {
public:
    explicit MontageCmd(CLI::App& app)
    {
        sub = app.add_subcommand("montage", "tile patches into one PGM grid");
        sub->add_option("paths", paths_, "PGM patches, in grid order");
        sub->add_option("--manifest", manifest_, "take patches from a manifest instead");
        sub->add_option("--label", label_, "only manifest entries with this label");
        sub->add_option("--limit", limit_, "at most this many manifest entries (0 = all)")->capture_default_str();
        sub->add_option("--columns", columns_, "tiles per row")->capture_default_str();
        sub->add_option("--out", out_, "output PGM")->capture_default_str();
    }

    int execute(Context& ctx) override
    {
        std::vector<fs::path> files(paths_.begin(), paths_.end());
        if (!manifest_.empty()) {
            std::optional<Label> only;
            if (!label_.empty() && !(only = parse_label(label_)))
                throw ConfigError("unknown label " + label_);
            const fs::path mpath = manifest_;
            for (const auto& e : load_manifest_file(mpath).entries)
                if ((!only || e.label == *only) && (limit_ == 0 || files.size() < limit_))
                    files.push_back(mpath.parent_path() / e.path);
        }
        if (files.empty())
            throw ConfigError("montage needs patch paths or --manifest");
        std::vector<Patch> patches;
        for (const auto& f : files)
            patches.push_back(load_pgm(f));
        const Patch grid = montage(patches, columns_);
        ensure_parent(out_);
        write_file(out_, write_pgm(grid));
        fmt::print(ctx.out, "montage {}x{} from {} patches\n", grid.width(), grid.height(), patches.size());
        return kExitOk;
    }

private:
    std::vector<std::string> paths_;
    std::string manifest_;
    std::string label_;
    std::size_t limit_ = 0;
    std::size_t columns_ = 4;
    std::string out_ = (data_dir() / "montage.pgm").string();
};

class StudyCreateCmd : public Command {
public:
    explicit StudyCreateCmd(CLI::App& app)
    {
        sub = app.add_subcommand("study-create", "create an observer session in the event log");
        sub->add_option("--manifest", manifest_, "patch manifest")->capture_default_str();
        sub->add_option("--log", log_, "event log")->capture_default_str();
        sub->add_option("--observer", observer_, "observer id")->required();
        sub->add_option("--n-per-class", n_, "items per class")->capture_default_str();
        sub->add_option("--seed", seed_, "sampling seed")->capture_default_str();
    }

    int execute(Context& ctx) override
    {
        const fs::path mpath = manifest_;
        StudyService svc(load_manifest_file(mpath), mpath.parent_path(), log_);
        for (const auto& w : svc.recovery_warnings())
            ctx.err << "warning: " << w << "\n";
        ctx.out << svc.create_study(observer_, n_, seed_) << "\n";
        return kExitOk;
    }

private:
    std::string manifest_ = default_manifest();
    std::string log_ = default_log();
    std::string observer_;
    std::size_t n_ = 75;
    std::uint64_t seed_ = 0;
};

class ServeCmd : public Command {
public:
    explicit ServeCmd(CLI::App& app)
    {
        sub = app.add_subcommand("serve", "run the observer-study HTTP service until interrupted");
        sub->add_option("--manifest", manifest_, "patch manifest")->capture_default_str();
        sub->add_option("--log", log_, "event log")->capture_default_str();
        sub->add_option("--listen", listen_, "host:port")->capture_default_str();
        sub->add_option("--static", static_dir_, "directory served at /");
    }

    int execute(Context& ctx) override
    {
        const auto colon = listen_.rfind(':');
        if (colon == std::string::npos)
            throw ConfigError("--listen must be host:port");
        const std::string host = listen_.substr(0, colon);
        const int port = parse_number<int>("--listen", listen_.substr(colon + 1));
        const fs::path mpath = manifest_;
        StudyService svc(load_manifest_file(mpath), mpath.parent_path(), log_);
        for (const auto& w : svc.recovery_warnings())
            ctx.err << "warning: " << w << "\n";
        StudyServer server(svc, static_dir_.empty() ? std::nullopt : std::optional<fs::path>(static_dir_));
        const int bound = server.bind(host, port);

        // Worker threads inherit the blocked mask; one thread waits for the signal.
        sigset_t set, previous;
        sigemptyset(&set);
        sigaddset(&set, SIGINT);
        sigaddset(&set, SIGTERM);
        sigaddset(&set, SIGUSR1);
        pthread_sigmask(SIG_BLOCK, &set, &previous);
        std::thread waiter([&] {
            int sig = 0;
            sigwait(&set, &sig);
            server.stop();
        });
        fmt::print(ctx.out, "listening on http://{}:{}\n", host, bound);
        ctx.out.flush();
        server.listen();
        pthread_kill(waiter.native_handle(), SIGUSR1);
        waiter.join();
        pthread_sigmask(SIG_SETMASK, &previous, nullptr);
        return kExitOk;
    }

private:
    std::string manifest_ = default_manifest();
    std::string log_ = default_log();
    std::string listen_ = env_or("BENCH_LISTEN", "127.0.0.1:8080");
    std::string static_dir_;
};

class ReportCmd : public Command {
public:
    explicit ReportCmd(CLI::App& app)
    {
        sub = app.add_subcommand("report", "print the ROC report of a completed session");
        sub->add_option("--session", session_, "session id")->required();
        sub->add_option("--log", log_, "event log")->capture_default_str();
        sub->add_option("--format", format_, "text or json")->check(CLI::IsMember({"text", "json"}))->capture_default_str();
    }

    int execute(Context& ctx) override
    {
        const StudySession s = session_from_log(log_, session_, ctx.err);
        if (s.status != SessionStatus::Complete)
            throw not_complete(s);
        const RocReport report = make_report(s.ratings);
        if (format_ == "json")
            ctx.out << report_json(s, report).dump(2) << "\n";
        else
            ctx.out << format_report(report);
        return kExitOk;
    }

private:
    std::string session_;
    std::string log_ = default_log();
    std::string format_ = "text";
};

int exit_code_for(const StudyError& e)
{
    switch (e.kind()) {
    case StudyError::Kind::NotReady:
        return kExitNotReady;
    case StudyError::Kind::Integrity:
        return kExitIo;
    default:
        return kExitUsage;
    }
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app("Mammogram patch pipeline: fixtures, GAN, t-SNE, observer study", "bench");
    app.require_subcommand(1);
    unsigned threads = std::max(1u, std::thread::hardware_concurrency());
    app.add_option("--threads", threads, "worker threads for parallel stages")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();

    std::vector<std::unique_ptr<Command>> commands;
    auto add = [&](std::unique_ptr<Command> cmd) { commands.push_back(std::move(cmd)); };
    add(std::make_unique<FixturesCmd>(app));
    add(std::make_unique<IngestCmd>(app));
    add(std::make_unique<GanTrainCmd>(app));
    add(std::make_unique<GanSampleCmd>(app));
    add(std::make_unique<TsneCmd>(app));
    add(std::make_unique<PlotRocCmd>(app));
    add(std::make_unique<MontageCmd>(app));
    add(std::make_unique<StudyCreateCmd>(app));
    add(std::make_unique<ServeCmd>(app));
    add(std::make_unique<ReportCmd>(app));

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    Context ctx{out, err, threads};
    try {
        for (auto& cmd : commands)
            if (cmd->sub->parsed())
                return cmd->execute(ctx);
        return kExitUsage;
    } catch (const StudyError& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ParseError& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    }
}

} // namespace mammo::cli
