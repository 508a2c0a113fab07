// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure. Reference values come from the independent oracles in
// oracles.hpp or from direct counting in this file.

#include "oracles.hpp"
#include "study_sim.hpp"

#include "mammo/cli.hpp"
#include "mammo/gan.hpp"
#include "mammo/scoring.hpp"
#include "mammo/studysvc.hpp"
#include "mammo/tsne.hpp"
#include "mammo/viz.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>

using namespace mammo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel_error(double a, double b)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// ---------------------------------------------------------------- t-SNE

struct ClusterFixture {
    Matrix x;
    std::vector<Label> labels;
};

/// Three unit-variance Gaussian clusters of 100 points in 64-D whose centres
/// are pairwise 6 sigma apart.
ClusterFixture three_clusters()
{
    const std::size_t per = 100, dim = 64;
    const Label names[] = {Label::RealLesion, Label::SyntheticLesion, Label::Normal};
    ClusterFixture f{Matrix(3 * per, dim), {}};
    Rng rng(20240601);
    const double offset = 6.0 / std::sqrt(2.0);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < per; ++i) {
            const std::size_t r = c * per + i;
            for (std::size_t k = 0; k < dim; ++k)
                f.x(r, k) = rng.normal() + (k == c ? offset : 0.0);
            f.labels.push_back(names[c]);
        }
    return f;
}

/// Fraction of points whose nearest class centroid (in the embedding) is
/// their own class.
double nearest_centroid_purity(const Matrix& y, const std::vector<Label>& labels)
{
    std::map<Label, std::array<double, 3>> acc;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& a = acc[labels[i]];
        a[0] += y(i, 0);
        a[1] += y(i, 1);
        a[2] += 1.0;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Label best = labels[i];
        double best_d = std::numeric_limits<double>::infinity();
        for (const auto& [l, a] : acc) {
            const double dx = y(i, 0) - a[0] / a[2], dy = y(i, 1) - a[1] / a[2];
            if (dx * dx + dy * dy < best_d) {
                best_d = dx * dx + dy * dy;
                best = l;
            }
        }
        hits += best == labels[i];
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

struct ClusterRun {
    Embedding embedding;
    double seconds = 0.0;
    TsneConfig cfg;
};

const ClusterRun& cluster_run()
{
    static const ClusterRun run = [] {
        ClusterRun r;
        const ClusterFixture f = three_clusters();
        r.cfg.perplexity = 30.0;
        r.cfg.iterations = 1000;
        r.cfg.rng_seed = 1;
        const auto t0 = std::chrono::steady_clock::now();
        r.embedding = run_tsne(f.x, r.cfg, f.labels);
        r.seconds = seconds_since(t0);
        return r;
    }();
    return run;
}

Outcome tsne_cluster_recovery()
{
    const ClusterRun& r = cluster_run();
    const double purity = nearest_centroid_purity(r.embedding.points, r.embedding.labels);
    return {purity >= 0.95 && r.seconds < 60.0,
            fmt::format("purity {:.4f} (need >= 0.95), {:.2f} s (need < 60 s)", purity, r.seconds)};
}

Outcome perplexity_calibration()
{
    Rng rng(99);
    double worst = 0.0;
    for (int row = 0; row < 500; ++row) {
        const std::size_t n = 2 + rng.below(400); // points in the data set
        const double scale = std::pow(10.0, rng.uniform(-3.0, 3.0));
        std::vector<double> d(n - 1);
        for (auto& v : d)
            v = scale * rng.uniform(0.0, 20.0);
        double target = rng.uniform(1.0, static_cast<double>(n - 1));
        if (row % 50 == 0)
            target = 1.0;
        else if (row % 50 == 1)
            target = static_cast<double>(n - 1);
        const auto got = conditional_probs(d, target);
        worst = std::max(worst, std::abs(oracle::perplexity_of(got.probs) - target) / target);
    }
    return {worst < 1e-3, fmt::format("worst relative perplexity error {:.3e} over 500 rows (need < 1e-3)", worst)};
}

Outcome tsne_gradient_check()
{
    Rng rng(31);
    const std::size_t n = 6;
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        Matrix p(n, n);
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j)
                total += 2.0 * (p(i, j) = p(j, i) = 0.05 + rng.uniform());
        for (auto& v : p.data())
            v /= total;
        Matrix y(n, 2);
        for (auto& v : y.data())
            v = rng.normal() * (trial % 2 ? 3.0 : 0.5);
        const Matrix g = tsne_gradient(p, low_dim_affinities(y), y);
        const auto fd = oracle::central_differences(
            [&](std::span<const double> v) {
                return oracle::naive_kl(p, oracle::naive_q(Matrix(n, 2, {v.begin(), v.end()})));
            },
            y.data(), 1e-6);
        for (std::size_t k = 0; k < fd.size(); ++k)
            worst = std::max(worst, rel_error(g.data()[k], fd[k]));
    }
    return {worst < 1e-5, fmt::format("max relative error {:.3e} over 50 N=6 instances (need < 1e-5)", worst)};
}

Outcome kl_descent()
{
    const ClusterRun& r = cluster_run();
    const auto& trace = r.embedding.kl_trace;
    const double at_end_of_exaggeration = trace.at(r.cfg.exaggeration_iters);
    const double final_kl = trace.back();
    return {final_kl < at_end_of_exaggeration,
            fmt::format("KL {:.6f} after exaggeration -> {:.6f} final", at_end_of_exaggeration, final_kl)};
}

// ---------------------------------------------------------------- GAN

Outcome gan_gradient_checks()
{
    double worst = 0.0;
    int instances = 0;
    for (std::uint64_t seed = 1; instances < 10; ++seed) {
        Rng rng(seed);
        const std::size_t hidden_g[] = {6, 5};
        const std::size_t hidden_d[] = {7};
        MlpParams g = make_mlp(4, hidden_g, 3, Activation::TanhUnit, rng);
        MlpParams d = make_mlp(3, hidden_d, 1, Activation::Sigmoid, rng);
        for (auto* net : {&g, &d})
            for (auto& l : net->layers)
                for (auto& b : l.bias)
                    b = rng.uniform(-0.3, 0.3);
        Matrix real(8, 3);
        for (auto& v : real.data())
            v = rng.uniform();
        const Matrix z = sample_latent(rng, 8, 4);
        const Matrix fake = generator_forward(g, z);
        // Finite differences need every ReLU input away from its kink.
        if (std::min({oracle::relu_margin(g, z), oracle::relu_margin(d, real), oracle::relu_margin(d, fake)}) <= 1e-3)
            continue;
        ++instances;
        const LossGrads dl = discriminator_loss(g, d, real, z);
        const LossGrads gl = generator_loss(g, d, z);
        const double eps = 1e-5;
        worst = std::max(
            {worst,
             oracle::max_param_fd_error(d, [&](const MlpParams& p) { return oracle::gan_d_loss(g, p, real, z); },
                                        dl.discriminator, eps),
             oracle::max_param_fd_error(g, [&](const MlpParams& p) { return oracle::gan_d_loss(p, d, real, z); },
                                        dl.generator, eps),
             oracle::max_param_fd_error(g, [&](const MlpParams& p) { return oracle::gan_g_loss(p, d, z); },
                                        gl.generator, eps),
             oracle::max_param_fd_error(d, [&](const MlpParams& p) { return oracle::gan_g_loss(g, p, z); },
                                        gl.discriminator, eps)});
    }
    return {worst < 1e-4,
            fmt::format("max relative error {:.3e} over 10 batches of 8, both losses x both networks (need < 1e-4)",
                        worst)};
}

Outcome gan_toy_convergence()
{
    const GanConfig cfg; // latent 200, batch 64, hidden {32}/{32}, lr 0.2, 5000 steps, seed 1
    const GaussianMixture2D mix;
    const auto t0 = std::chrono::steady_clock::now();
    GanModel model = init_gan(cfg, 2, 2, 1);
    train_gan(model, [&](Rng& rng, std::size_t n) { return mix.sample(rng, n); });
    Rng rng(777);
    const Matrix x = generator_forward(model.generator, sample_latent(rng, 1000, cfg.latent_dim));
    const double secs = seconds_since(t0);
    std::size_t near = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        bool hit = false;
        for (const auto& m : mix.means)
            hit |= std::hypot(x(i, 0) - m[0], x(i, 1) - m[1]) <= 0.2;
        near += hit;
    }
    const double frac = static_cast<double>(near) / static_cast<double>(x.rows());
    return {frac >= 0.8 && secs < 120.0,
            fmt::format("{:.1f}% of 1000 samples within 0.2 of a mean (need >= 80%), {:.2f} s (need < 120 s), "
                        "seed {}",
                        100.0 * frac, secs, cfg.rng_seed)};
}

// ---------------------------------------------------------------- scoring

Outcome auc_equals_pair_counting()
{
    double worst = 0.0;
    std::size_t cases = 0;
    const Truth truths[] = {Truth::Real, Truth::Real, Truth::Synthetic, Truth::Synthetic};
    for (std::size_t code = 0; code < 6 * 6 * 6 * 6; ++code) {
        std::vector<Rating> rs;
        std::size_t c = code;
        for (std::size_t i = 0; i < 4; ++i, c /= 6)
            rs.push_back({fmt::format("x{}", i), truths[i], kConfidenceLevels[c % 6], "o", 0});
        worst = std::max(worst, std::abs(make_report(rs).auc - oracle::mann_whitney(rs)));
        ++cases;
    }
    Rng rng(4242);
    for (int s = 0; s < 1000; ++s) {
        std::vector<Rating> rs;
        for (std::size_t i = 0; i < 150; ++i)
            rs.push_back({fmt::format("x{}", i), i < 75 ? Truth::Real : Truth::Synthetic,
                          kConfidenceLevels[rng.below(6)], "o", 0});
        worst = std::max(worst, std::abs(make_report(rs).auc - oracle::mann_whitney(rs)));
        ++cases;
    }
    return {worst <= 1e-12,
            fmt::format("max |AUC - pair count| {:.3e} over {} cases (6^4 exhaustive + 1000 sessions; need <= 1e-12)",
                        worst, cases)};
}

Outcome confidence_mapping()
{
    const double expected[] = {0.95, 0.77, 0.59, 0.41, 0.23, 0.05};
    bool ok = true;
    for (std::size_t i = 0; i < 6; ++i)
        ok &= level_to_prob(kConfidenceLevels[i]) == expected[i] && level_index(kConfidenceLevels[i]) == i;
    using CL = ConfidenceLevel;
    auto acc = [](std::vector<std::pair<Truth, CL>> items, double threshold = 0.5) {
        std::vector<Rating> rs;
        for (const auto& [t, l] : items)
            rs.push_back({"i" + std::to_string(rs.size()), t, l, "o", 0});
        return accuracy(rs, threshold);
    };
    const bool hand = acc({{Truth::Real, CL::SlightlyReal}, {Truth::Synthetic, CL::SlightlyFake}}) == 1.0 &&
                      acc({{Truth::Real, CL::SlightlyFake}, {Truth::Synthetic, CL::SlightlyReal}}) == 0.0 &&
                      acc({{Truth::Real, CL::ExtremelyReal}, {Truth::Synthetic, CL::ModeratelyReal}}) == 0.5 &&
                      // strict threshold: a score equal to the threshold is not called real
                      acc({{Truth::Real, CL::SlightlyReal}}, 0.59) == 0.0 &&
                      acc({{Truth::Synthetic, CL::SlightlyReal}}, 0.59) == 1.0;
    return {ok && hand, fmt::format("six levels map to 0.95..0.05 in order: {}; threshold hand cases: {}",
                                    ok ? "yes" : "no", hand ? "all correct" : "mismatch")};
}

Manifest pool_manifest(std::size_t per_class)
{
    Manifest m;
    for (std::size_t i = 0; i < per_class; ++i) {
        m.entries.push_back({fmt::format("real/{}.pgm", i), Label::RealLesion, {}});
        m.entries.push_back({fmt::format("synth/{}.pgm", i), Label::SyntheticLesion, {}});
    }
    return m;
}

Outcome scripted_observers()
{
    StudyService svc(pool_manifest(100), ".", "", sim::counting_clock());
    auto walk = [&](const std::string& sid, const std::function<ConfidenceLevel(Truth)>& pick) {
        const StudySession s = svc.session(sid);
        for (std::size_t i = 0; i < s.items.size(); ++i)
            svc.record_rating(sid, s.items[i].item_id, pick(s.items[i].truth), fmt::format("{}/{}", sid, i));
        return svc.compute_report(sid);
    };
    const std::string truthful = svc.create_study("truthful", 75, 1);
    const RocReport t = walk(truthful, [](Truth tr) {
        return tr == Truth::Real ? ConfidenceLevel::ExtremelyReal : ConfidenceLevel::ExtremelyFake;
    });

    Rng rng(2718);
    double sum = 0.0;
    for (std::uint64_t k = 0; k < 1000; ++k) {
        const std::string sid = svc.create_study("random", 75, k);
        sum += walk(sid, [&](Truth) { return kConfidenceLevels[rng.below(6)]; }).auc;
    }
    const double mean = sum / 1000.0;
    const bool ok = t.accuracy == 1.0 && t.auc == 1.0 && t.n_real == 75 && t.n_fake == 75 &&
                    std::abs(mean - 0.5) <= 0.02;
    return {ok, fmt::format("truthful: accuracy {:.3f}, AUC {:.3f}; random over 1000 sessions: mean AUC {:.4f} "
                            "(need 1.0/1.0 and 0.5 +- 0.02)",
                            t.accuracy, t.auc, mean)};
}

// ---------------------------------------------------------------- studysvc

Outcome replay_equivalence()
{
    sim::TempDir dir;
    const Manifest manifest = pool_manifest(8);
    std::size_t sequences_ok = 0, requests = 0;
    bool exactly_once = true;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const fs::path log = dir.path / fmt::format("events-{}.jsonl", seed);
        StudyState live;
        {
            StudyService svc(manifest, dir.path, log, sim::counting_clock());
            requests += sim::random_requests(svc, seed, 8);
            live = svc.snapshot();
        }
        const std::string bytes = read_text_file(log.string());
        const bool same = replay_log(bytes).state == live &&
                          StudyService(manifest, dir.path, log, sim::counting_clock()).snapshot() == live;
        sequences_ok += same;
        std::size_t rated = 0;
        for (const auto& [id, s] : live.sessions)
            rated += s.cursor;
        const auto per_item = sim::ratings_per_item(bytes);
        exactly_once &= per_item.size() == rated;
        for (const auto& [key, n] : per_item)
            exactly_once &= n == 1;
    }
    return {sequences_ok == 200 && exactly_once,
            fmt::format("{}/200 sequences ({} requests) replay to the live state; one RatingRecorded per item: {}",
                        sequences_ok, requests, exactly_once ? "yes" : "no")};
}

// ---------------------------------------------------------------- pipeline

int bench(const std::vector<std::string>& args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0)
        fmt::print(stderr, "bench {} failed ({}): {}\n", args.front(), code, err.str());
    return code;
}

void run_pipeline(const fs::path& root)
{
    const std::string fx = (root / "fx").string(), patches = (root / "patches").string();
    if (bench({"fixtures", "--out", fx, "--per-class", "12", "--seed", "5"}) != 0 ||
        bench({"ingest", "--manifest", fx + "/manifest.csv", "--out", patches}) != 0 ||
        bench({"tsne", "--features", patches + "/features.f32", "--labels", patches + "/labels.txt", "--out",
               (root / "tsne").string(), "--perplexity", "10", "--iterations", "300", "--seed", "7"}) != 0)
        throw Error("pipeline command failed");
}

Outcome pipeline_determinism()
{
    sim::TempDir a, b;
    run_pipeline(a.path);
    run_pipeline(b.path);
    std::size_t files = 0, identical = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.path)) {
        if (!e.is_regular_file())
            continue;
        const fs::path rel = fs::relative(e.path(), a.path);
        ++files;
        identical += fs::exists(b.path / rel) && read_file(e.path().string()) == read_file((b.path / rel).string());
    }
    const bool svg = fs::exists(a.path / "tsne" / "scatter.svg");
    return {files > 0 && identical == files && svg,
            fmt::format("{}/{} artefacts byte-identical across two runs (fixtures, patches, features, embedding, "
                        "KL trace, scatter SVG)",
                        identical, files)};
}

Outcome montage_of_sixteen()
{
    sim::TempDir dir;
    run_pipeline(dir.path);
    const fs::path mpath = dir.path / "patches" / "manifest.csv";
    const Manifest m = load_manifest(read_text_file(mpath.string()));
    std::vector<Patch> tiles;
    for (std::size_t i = 0; i < 16; ++i)
        tiles.push_back(read_pgm(read_file((dir.path / "patches" / m.entries[i].path).string())));
    const Patch grid = montage(tiles, 4);
    bool exact = grid.width() == 512 && grid.height() == 512;
    for (int r = 0; r < 4 && exact; ++r)
        for (int c = 0; c < 4 && exact; ++c)
            for (int j = 0; j < 128 && exact; ++j)
                for (int i = 0; i < 128; ++i)
                    if (grid.at(c * 128 + i, r * 128 + j) != tiles[static_cast<std::size_t>(r * 4 + c)].at(i, j)) {
                        exact = false;
                        break;
                    }
    // The CLI path writes the same grid.
    const fs::path out = dir.path / "montage.pgm";
    const bool cli_ok = bench({"montage", "--manifest", mpath.string(), "--limit", "16", "--columns", "4", "--out",
                               out.string()}) == 0 &&
                        read_file(out.string()) == write_pgm(grid);
    return {exact && cli_ok, fmt::format("{}x{} output, every pixel at its tile position: {}; CLI output identical: {}",
                                         grid.width(), grid.height(), exact ? "yes" : "no", cli_ok ? "yes" : "no")};
}

} // namespace

int main()
{
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"t-SNE cluster recovery (3x100 points, 64-D, perplexity 30, 1000 iterations)", tsne_cluster_recovery},
        {"Perplexity calibration within 0.1%", perplexity_calibration},
        {"t-SNE gradient vs central differences", tsne_gradient_check},
        {"KL descent after early exaggeration", kl_descent},
        {"GAN gradient checks", gan_gradient_checks},
        {"GAN toy-mixture convergence", gan_toy_convergence},
        {"AUC equals Mann-Whitney pair counting", auc_equals_pair_counting},
        {"Confidence mapping and accuracy threshold", confidence_mapping},
        {"Scripted truthful and random observers", scripted_observers},
        {"Study service replay equivalence", replay_equivalence},
        {"End-to-end pipeline determinism", pipeline_determinism},
        {"Montage of 16 patches in 4 columns", montage_of_sixteen},
    };
    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        fmt::print("{} [{:02}] {}: {}\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail);
        std::fflush(stdout);
    }
    fmt::print("{} of {} criteria passed\n", criteria.size() - static_cast<std::size_t>(failures), criteria.size());
    return failures == 0 ? 0 : 1;
}
