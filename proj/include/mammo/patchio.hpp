#pragma once

#include "mammo/matrix.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mammo {

enum class Label { RealLesion, SyntheticLesion, Normal, Unlabeled };

/// Manifest/CSV token: real_lesion, synthetic_lesion, normal, unlabeled.
std::string_view label_token(Label label);
std::optional<Label> parse_label(std::string_view token);

/// Grayscale tile, row-major, every pixel in [0,1].
class Patch {
public:
    /// Throws ConfigError if the dimensions or pixel values are invalid.
    Patch(int width, int height, std::vector<double> pixels, Label label = Label::Unlabeled);

    /// All-black patch.
    static Patch filled(int width, int height, double value = 0.0, Label label = Label::Unlabeled);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    Label label() const noexcept { return label_; }
    void set_label(Label label) noexcept { label_ = label; }

    double at(int x, int y) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    const std::vector<double>& pixels() const noexcept { return pixels_; }

    friend bool operator==(const Patch&, const Patch&) = default;

private:
    int width_;
    int height_;
    std::vector<double> pixels_;
    Label label_;
};

struct Point {
    int x = 0;
    int y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

// --- binary PGM (P5) ---

/// Accepts maxval 255 (1 byte/pixel) and 65535 (2 bytes, big-endian).
/// Throws ParseError naming the byte offset on malformed input.
Patch read_pgm(std::span<const std::uint8_t> bytes);

/// P5 with maxval 255; each byte is round(p*255), half away from zero.
std::vector<std::uint8_t> write_pgm(const Patch& patch);

// --- f32raw: "PF32\n<width> <height>\n" then width*height little-endian float32 ---

Matrix read_f32raw(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_f32raw(const Matrix& m);

/// Parses one f32raw block starting at `offset`; advances `offset` past it.
Matrix read_f32raw(std::span<const std::uint8_t> bytes, std::size_t& offset);

Patch patch_from_f32raw(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> patch_to_f32raw(const Patch& patch);

// --- processing ---

/// Maps each pixel to the empirical CDF of its bin: the fraction of pixels in
/// bins <= its own. Pixel p falls in bin min(floor(p*bins), bins-1).
Patch histogram_equalize(const Patch& patch, int bins = 256);

/// size x size crop nominally centred on `center` (x = column, y = row). The
/// window is shifted to stay inside the image rather than padded.
Patch extract_patch(const Patch& image, Point center, int size = 128,
                    Label label = Label::Unlabeled);

/// Mean of each factor x factor block. Throws ConfigError unless both
/// dimensions are divisible by `factor`.
Patch block_average(const Patch& patch, int factor);

/// Top-left corner that extract_patch uses for the given centre.
Point crop_origin(int image_width, int image_height, Point center, int size);

// --- manifests ---

struct ManifestEntry {
    std::string path;
    Label label = Label::Unlabeled;
    std::optional<Point> center;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
    std::vector<ManifestEntry> entries;

    std::size_t count(Label label) const;
};

inline constexpr std::string_view kManifestHeader = "path,label,x,y";

/// Lines "path,label[,x,y]"; the header line is skipped when present.
/// Throws ConfigError naming the 1-based line on a duplicate path, unknown
/// label, or malformed coordinates.
Manifest load_manifest(std::string_view text);
std::string format_manifest(const Manifest& manifest);

// --- file helpers ---

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::string& path, std::string_view text);
std::string read_text_file(const std::string& path);

} // namespace mammo
