#pragma once

#include "mammo/patchio.hpp"
#include "mammo/rng.hpp"

#include <cstdint>
#include <filesystem>

namespace mammo {

/// Synthetic stand-ins for mammogram crops. Every image is a noisy, slightly
/// tilted background; real lesions add a large smooth elliptical blob,
/// synthetic lesions a small round blob modulated by a 4-pixel checkerboard,
/// normal tissue neither.
struct FixtureOptions {
    std::size_t per_class = 10; ///< images per label
    int image_size = 256;
    std::uint64_t seed = 1;
};

Patch fixture_image(Label label, int size, Point center, Rng& rng);

/// Writes <dir>/sources/*.pgm and <dir>/manifest.csv (paths relative to
/// <dir>, lesion centres as x,y) and returns the manifest.
Manifest write_fixtures(const std::filesystem::path& dir, const FixtureOptions& options);

} // namespace mammo
