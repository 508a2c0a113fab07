#include "mammo/fixtures.hpp"

#include "mammo/error.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mammo {

Patch fixture_image(Label label, int size, Point center, Rng& rng)
{
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double tilt = 0.05 * (rng.uniform() - 0.5) / size;
    double sx = 0.0, sy = 0.0;
    if (label == Label::RealLesion) {
        sx = 14.0 + 4.0 * rng.uniform();
        sy = 14.0 + 4.0 * rng.uniform();
    } else if (label == Label::SyntheticLesion) {
        sx = sy = 7.0 + 2.0 * rng.uniform();
    }
    std::vector<double> px(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            double v = 0.35 + tilt * (x + y) + 0.05 * rng.normal();
            if (sx > 0.0) {
                const double dx = (x - center.x) / sx, dy = (y - center.y) / sy;
                double blob = 0.45 * std::exp(-0.5 * (dx * dx + dy * dy));
                if (label == Label::SyntheticLesion)
                    blob *= 1.0 + 0.25 * std::cos(two_pi * x / 4.0) * std::cos(two_pi * y / 4.0);
                v += blob;
            }
            px[static_cast<std::size_t>(y) * size + x] = std::clamp(v, 0.0, 1.0);
        }
    return Patch(size, size, std::move(px), label);
}

Manifest write_fixtures(const std::filesystem::path& dir, const FixtureOptions& options)
{
    if (options.per_class == 0)
        throw ConfigError("fixtures need at least one image per class");
    if (options.image_size < 16)
        throw ConfigError("fixture images must be at least 16 pixels wide");
    std::error_code ec;
    std::filesystem::create_directories(dir / "sources", ec);
    if (ec)
        throw IoError("cannot create " + (dir / "sources").string() + ": " + ec.message());

    Rng rng(options.seed);
    Manifest manifest;
    const int lo = options.image_size / 4, span = options.image_size / 2;
    for (Label label : {Label::RealLesion, Label::SyntheticLesion, Label::Normal})
        for (std::size_t i = 0; i < options.per_class; ++i) {
            const Point c{lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(span))),
                          lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(span)))};
            const std::string rel = fmt::format("sources/{}_{:04}.pgm", label_token(label), i);
            write_file((dir / rel).string(), write_pgm(fixture_image(label, options.image_size, c, rng)));
            manifest.entries.push_back({rel, label, c});
        }
    write_text_file((dir / "manifest.csv").string(), format_manifest(manifest));
    return manifest;
}

} // namespace mammo
