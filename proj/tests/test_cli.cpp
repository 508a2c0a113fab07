#include "doctest.h"

#include "study_sim.hpp"

#include "mammo/cli.hpp"
#include "mammo/study_http.hpp"

#include <cmath>
#include <sstream>

using namespace mammo;
using sim::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result bench(std::vector<std::string> args)
{
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p)
{
    return read_text_file(p.string());
}

std::size_t line_count(const std::string& s)
{
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

/// fixtures + ingest into <root>/fx and <root>/patches.
void prepare(const fs::path& root, std::size_t per_class)
{
    REQUIRE(bench({"fixtures", "--out", (root / "fx").string(), "--per-class", std::to_string(per_class)}).code == 0);
    REQUIRE(bench({"ingest", "--manifest", (root / "fx" / "manifest.csv").string(), "--out",
                   (root / "patches").string()})
                .code == 0);
}

} // namespace

TEST_CASE("key=value parsing")
{
    const auto kv = cli::parse_key_values("# comment\nperplexity = 30\n\n  iterations=5 # trailing\r\n");
    REQUIRE(kv.size() == 2);
    CHECK(kv[0] == std::pair<std::string, std::string>{"perplexity", "30"});
    CHECK(kv[1] == std::pair<std::string, std::string>{"iterations", "5"});
    try {
        cli::parse_key_values("a=1\nbroken\n");
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("usage errors and help")
{
    CHECK(bench({}).code == cli::kExitUsage);
    CHECK(bench({"frobnicate"}).code == cli::kExitUsage);
    CHECK(bench({"tsne", "--bogus"}).code == cli::kExitUsage);
    const Result help = bench({"--help"});
    CHECK(help.code == 0);
    CHECK(help.out.find("gan-train") != std::string::npos);
}

TEST_CASE("ingest of a three-entry manifest writes three patches and a summary")
{
    TempDir dir;
    REQUIRE(bench({"fixtures", "--out", (dir.path / "fx").string(), "--per-class", "1"}).code == 0);
    const Result r =
        bench({"ingest", "--manifest", (dir.path / "fx" / "manifest.csv").string(), "--out", (dir.path / "p").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out == "real_lesion:1 synthetic_lesion:1 normal:1\n");
    std::size_t pgms = 0;
    for (const auto& e : fs::directory_iterator(dir.path / "p" / "patches")) {
        const Patch p = read_pgm(read_file(e.path().string()));
        CHECK(p.width() == 128);
        CHECK(p.height() == 128);
        ++pgms;
    }
    CHECK(pgms == 3);
    const Matrix f = read_f32raw(read_file((dir.path / "p" / "features.f32").string()));
    CHECK(f.rows() == 3);
    CHECK(f.cols() == 32 * 32);
    CHECK(slurp(dir.path / "p" / "labels.txt") == "real_lesion\nsynthetic_lesion\nnormal\n");

    const std::string first = slurp(dir.path / "p" / "patches" / "0000_real_lesion_0000.pgm");
    REQUIRE(bench({"ingest", "--manifest", (dir.path / "fx" / "manifest.csv").string(), "--out",
                   (dir.path / "p").string()})
                .code == 0);
    CHECK(slurp(dir.path / "p" / "patches" / "0000_real_lesion_0000.pgm") == first);
}

TEST_CASE("ingest names a missing source and exits with the I/O code")
{
    TempDir dir;
    write_text_file((dir.path / "m.csv").string(), "path,label,x,y\nabsent.pgm,normal,,\n");
    const Result r = bench({"ingest", "--manifest", (dir.path / "m.csv").string(), "--out", (dir.path / "o").string()});
    CHECK(r.code == cli::kExitIo);
    CHECK(r.err.find("absent.pgm") != std::string::npos);
}

TEST_CASE("tsne rejects a perplexity above N-1 before computing")
{
    TempDir dir;
    prepare(dir.path, 4);
    const Result r = bench({"tsne", "--features", (dir.path / "patches" / "features.f32").string(), "--labels",
                            (dir.path / "patches" / "labels.txt").string(), "--out", (dir.path / "t").string(),
                            "--perplexity", "250"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("perplexity") != std::string::npos);
    CHECK_FALSE(fs::exists(dir.path / "t"));
}

TEST_CASE("tsne writes three files, reruns identically and honours config precedence")
{
    TempDir dir;
    prepare(dir.path, 6);
    const fs::path cfg = dir.path / "tsne.cfg";
    write_text_file(cfg.string(), "perplexity = 5\niterations = 30\nexaggeration_iters = 10\nseed = 3\n");
    auto run_to = [&](const std::string& out, std::vector<std::string> extra) {
        std::vector<std::string> args = {"tsne", "--features", (dir.path / "patches" / "features.f32").string(),
                                         "--labels", (dir.path / "patches" / "labels.txt").string(),
                                         "--out", (dir.path / out).string(), "--config", cfg.string()};
        args.insert(args.begin(), extra.begin(), extra.end());
        return bench(args).code;
    };
    REQUIRE(run_to("a", {"--threads", "1"}) == 0);
    REQUIRE(run_to("b", {"--threads", "4"}) == 0);
    for (const char* f : {"embedding.csv", "kl_trace.csv", "scatter.svg"})
        CHECK(slurp(dir.path / "a" / f) == slurp(dir.path / "b" / f));
    CHECK(line_count(slurp(dir.path / "a" / "kl_trace.csv")) == 31);
    CHECK(line_count(slurp(dir.path / "a" / "embedding.csv")) == 19);

    std::vector<std::string> args = {"tsne", "--features", (dir.path / "patches" / "features.f32").string(),
                                     "--labels", (dir.path / "patches" / "labels.txt").string(),
                                     "--out", (dir.path / "c").string(), "--config", cfg.string(),
                                     "--iterations", "20"};
    REQUIRE(bench(args).code == 0);
    CHECK(line_count(slurp(dir.path / "c" / "kl_trace.csv")) == 21);

    write_text_file(cfg.string(), "perplexityy = 5\n");
    CHECK(run_to("d", {}) == cli::kExitUsage);
}

TEST_CASE("gan-train on the toy target logs finite losses; samples tile into a montage")
{
    TempDir dir;
    const Result r = bench({"gan-train", "--out", (dir.path / "toy").string(), "--steps", "50"});
    REQUIRE(r.code == 0);
    const std::string trace = slurp(dir.path / "toy" / "trace.csv");
    CHECK(line_count(trace) == 51);
    std::istringstream lines(trace);
    std::string line;
    std::getline(lines, line);
    while (std::getline(lines, line)) {
        double d = 0, g = 0;
        int step = 0;
        REQUIRE(std::sscanf(line.c_str(), "%d,%lf,%lf", &step, &d, &g) == 3);
        CHECK(std::isfinite(d));
        CHECK(std::isfinite(g));
    }

    prepare(dir.path, 3);
    REQUIRE(bench({"gan-train", "--out", (dir.path / "g").string(), "--manifest",
                   (dir.path / "patches" / "manifest.csv").string(), "--downsample", "8", "--steps", "5",
                   "--latent-dim", "16", "--batch-size", "4"})
                .code == 0);
    REQUIRE(bench({"gan-sample", "--checkpoint", (dir.path / "g" / "checkpoint.gan").string(), "-n", "16",
                   "--out", (dir.path / "s").string()})
                .code == 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir.path / "s"))
        files += e.path().extension() == ".pgm";
    CHECK(files == 16);
    const Manifest samples = load_manifest(slurp(dir.path / "s" / "manifest.csv"));
    CHECK(samples.count(Label::SyntheticLesion) == 16);
    REQUIRE(bench({"montage", "--manifest", (dir.path / "s" / "manifest.csv").string(), "--columns", "4", "--out",
                   (dir.path / "grid.pgm").string()})
                .code == 0);
    const Patch grid = read_pgm(read_file((dir.path / "grid.pgm").string()));
    CHECK(grid.width() == 64);
    CHECK(grid.height() == 64);

    std::string ckpt = slurp(dir.path / "g" / "checkpoint.gan");
    ckpt[0] = 'X';
    write_text_file((dir.path / "bad.gan").string(), ckpt);
    CHECK(bench({"gan-sample", "--checkpoint", (dir.path / "bad.gan").string(), "--out", (dir.path / "x").string()})
              .code == cli::kExitIo);
}

TEST_CASE("montage of sixteen fixture patches in four columns is 512x512")
{
    TempDir dir;
    prepare(dir.path, 6);
    const Result r = bench({"montage", "--manifest", (dir.path / "patches" / "manifest.csv").string(), "--limit", "16",
                            "--columns", "4", "--out", (dir.path / "m.pgm").string()});
    REQUIRE(r.code == 0);
    const Patch m = read_pgm(read_file((dir.path / "m.pgm").string()));
    CHECK(m.width() == 512);
    CHECK(m.height() == 512);
    const Manifest man = load_manifest(slurp(dir.path / "patches" / "manifest.csv"));
    const Patch tile5 = read_pgm(read_file((dir.path / "patches" / man.entries[5].path).string()));
    for (int y = 0; y < 128; y += 3)
        for (int x = 0; x < 128; x += 3)
            REQUIRE(m.at(128 + x, 128 + y) == tile5.at(x, y));
}

TEST_CASE("study-create, report and plot-roc over an event log")
{
    TempDir dir;
    prepare(dir.path, 4);
    const std::string manifest = (dir.path / "patches" / "manifest.csv").string();
    const std::string log = (dir.path / "study" / "events.jsonl").string();
    const Result created = bench({"study-create", "--manifest", manifest, "--log", log, "--observer", "rad1",
                                  "--n-per-class", "3", "--seed", "2"});
    REQUIRE(created.code == 0);
    CHECK(created.out == "s0001\n");

    const Result early = bench({"report", "--session", "s0001", "--log", log});
    CHECK(early.code == cli::kExitNotReady);
    CHECK(early.err.find("not complete") != std::string::npos);
    CHECK(bench({"report", "--session", "s0001", "--log", (dir.path / "none.jsonl").string()}).code == cli::kExitIo);
    CHECK(bench({"report", "--session", "s0042", "--log", log}).code == cli::kExitUsage);

    {
        StudyService svc(load_manifest(slurp(manifest)), dir.path / "patches", log);
        const StudySession s = svc.session("s0001");
        for (std::size_t i = 0; i < s.items.size(); ++i)
            svc.record_rating("s0001", s.items[i].item_id,
                              s.items[i].truth == Truth::Real ? ConfidenceLevel::ModeratelyReal
                                                              : ConfidenceLevel::SlightlyFake,
                              std::to_string(i));
    }
    const Result done = bench({"report", "--session", "s0001", "--log", log});
    REQUIRE(done.code == 0);
    CHECK(done.out.find("accuracy:1") != std::string::npos);
    CHECK(done.out.find("auc:1") != std::string::npos);
    CHECK(done.out.find("n_real:3") != std::string::npos);
    const Result json = bench({"report", "--session", "s0001", "--log", log, "--format", "json"});
    CHECK(nlohmann::json::parse(json.out).at("n_fake") == 3);

    const Result roc = bench({"plot-roc", "--session", "s0001", "--log", log, "--out", (dir.path / "roc.svg").string()});
    REQUIRE(roc.code == 0);
    CHECK(roc.out == done.out);
    CHECK(slurp(dir.path / "roc.svg").find("AUC = 1.00") != std::string::npos);
}

TEST_CASE("plot-roc from a ratings file")
{
    TempDir dir;
    write_text_file((dir.path / "r.csv").string(),
                    "item_id,truth,level\na,real,extremely_real\nb,synthetic,2\nc,real,slightly_fake\nd,synthetic,6\n");
    const Result r = bench({"plot-roc", "--ratings", (dir.path / "r.csv").string(), "--out",
                            (dir.path / "roc.svg").string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("accuracy:0.5") != std::string::npos);
    CHECK(r.out.find("auc:0.75") != std::string::npos);
    write_text_file((dir.path / "bad.csv").string(), "a,real\n");
    CHECK(bench({"plot-roc", "--ratings", (dir.path / "bad.csv").string()}).code == cli::kExitUsage);
}

TEST_CASE("serve fails with the I/O code when the port is taken")
{
    TempDir dir;
    prepare(dir.path, 2);
    const std::string manifest = (dir.path / "patches" / "manifest.csv").string();
    StudyService svc(load_manifest(slurp(manifest)), dir.path / "patches", "");
    StudyServer holder(svc);
    const int port = holder.bind("127.0.0.1", 0);
    const Result r = bench({"serve", "--manifest", manifest, "--log", (dir.path / "e.jsonl").string(), "--listen",
                            fmt::format("127.0.0.1:{}", port)});
    CHECK(r.code == cli::kExitIo);
    CHECK(r.err.find(std::to_string(port)) != std::string::npos);
    CHECK(bench({"serve", "--manifest", manifest, "--listen", "nocolon"}).code == cli::kExitUsage);
}
