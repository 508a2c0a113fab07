#include "mammo/patchio.hpp"

#include "mammo/error.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

namespace mammo {

std::string_view label_token(Label label)
{
    switch (label) {
    case Label::RealLesion: return "real_lesion";
    case Label::SyntheticLesion: return "synthetic_lesion";
    case Label::Normal: return "normal";
    case Label::Unlabeled: return "unlabeled";
    }
    return "unlabeled";
}

std::optional<Label> parse_label(std::string_view token)
{
    for (Label l : {Label::RealLesion, Label::SyntheticLesion, Label::Normal, Label::Unlabeled})
        if (token == label_token(l))
            return l;
    return std::nullopt;
}

Patch::Patch(int width, int height, std::vector<double> pixels, Label label)
    : width_(width), height_(height), pixels_(std::move(pixels)), label_(label)
{
    if (width <= 0 || height <= 0)
        throw ConfigError("patch dimensions must be positive, got " + std::to_string(width) + "x" +
                          std::to_string(height));
    if (pixels_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
        throw ConfigError("patch pixel count " + std::to_string(pixels_.size()) +
                          " does not match " + std::to_string(width) + "x" + std::to_string(height));
    for (std::size_t i = 0; i < pixels_.size(); ++i)
        if (!(pixels_[i] >= 0.0 && pixels_[i] <= 1.0))
            throw ConfigError("pixel " + std::to_string(i) + " outside [0,1]");
}

Patch Patch::filled(int width, int height, double value, Label label)
{
    const auto n = static_cast<std::size_t>(std::max(width, 0)) * static_cast<std::size_t>(std::max(height, 0));
    return Patch(width, height, std::vector<double>(n, value), label);
}

// ---------------------------------------------------------------- PGM

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::size_t pos() const { return pos_; }
    std::size_t token_start() const { return token_start_; }

    void expect_magic(std::string_view magic)
    {
        if (bytes_.size() < magic.size() ||
            std::memcmp(bytes_.data(), magic.data(), magic.size()) != 0)
            throw ParseError("missing magic \"" + std::string(magic) + "\"", 0);
        pos_ = magic.size();
    }

    // Skips whitespace and '#' comments, then reads a decimal integer.
    unsigned long read_uint(const char* what)
    {
        bool saw_space = false;
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                saw_space = true;
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                saw_space = true;
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n')
                    ++pos_;
            } else {
                break;
            }
        }
        if (!saw_space)
            throw ParseError(std::string("expected whitespace before ") + what, pos_);
        const std::size_t start = pos_;
        token_start_ = start;
        unsigned long value = 0;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > 1'000'000'000UL)
                throw ParseError(std::string(what) + " too large", start);
            ++pos_;
        }
        if (pos_ == start)
            throw ParseError(std::string("expected ") + what, pos_);
        return value;
    }

    void expect_single_space()
    {
        if (pos_ >= bytes_.size() || !is_space(bytes_[pos_]))
            throw ParseError("expected single whitespace after header", pos_);
        ++pos_;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
    std::size_t token_start_ = 0;
};

} // namespace

Patch read_pgm(std::span<const std::uint8_t> bytes)
{
    HeaderReader header(bytes);
    header.expect_magic("P5");
    const auto width = header.read_uint("width");
    const auto height = header.read_uint("height");
    const auto maxval = header.read_uint("maxval");
    const std::size_t maxval_offset = header.token_start();
    if (width == 0 || height == 0)
        throw ParseError("zero image dimension", maxval_offset);
    if (maxval != 255 && maxval != 65535)
        throw ParseError("unsupported maxval " + std::to_string(maxval), maxval_offset);
    header.expect_single_space();

    const std::size_t data_start = header.pos();
    const std::size_t bytes_per_pixel = maxval == 255 ? 1 : 2;
    const std::size_t count = width * height;
    const std::size_t available = bytes.size() - data_start;
    if (available < count * bytes_per_pixel)
        throw ParseError("truncated pixel data: need " + std::to_string(count * bytes_per_pixel) +
                             " bytes, have " + std::to_string(available),
                         bytes.size());

    std::vector<double> pixels(count);
    const double scale = 1.0 / static_cast<double>(maxval);
    const std::uint8_t* data = bytes.data() + data_start;
    for (std::size_t i = 0; i < count; ++i) {
        unsigned v = bytes_per_pixel == 1 ? data[i] : (unsigned(data[2 * i]) << 8) | data[2 * i + 1];
        if (v > maxval)
            throw ParseError("sample exceeds maxval", data_start + i * bytes_per_pixel);
        pixels[i] = v * scale;
    }
    return Patch(static_cast<int>(width), static_cast<int>(height), std::move(pixels));
}

std::vector<std::uint8_t> write_pgm(const Patch& patch)
{
    const std::string header =
        "P5\n" + std::to_string(patch.width()) + " " + std::to_string(patch.height()) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + patch.pixels().size());
    for (double p : patch.pixels())
        out.push_back(static_cast<std::uint8_t>(std::lround(p * 255.0)));
    return out;
}

// ---------------------------------------------------------------- f32raw

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void append_f32_le(std::vector<std::uint8_t>& out, float v)
{
    auto bits = std::bit_cast<std::uint32_t>(v);
    for (int i = 0; i < 4; ++i)
        out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float load_f32_le(const std::uint8_t* p)
{
    std::uint32_t bits = 0;
    for (int i = 0; i < 4; ++i)
        bits |= std::uint32_t(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

} // namespace

Matrix read_f32raw(std::span<const std::uint8_t> bytes, std::size_t& offset)
{
    const auto block = bytes.subspan(offset);
    if (block.size() < 5 || std::memcmp(block.data(), "PF32\n", 5) != 0)
        throw ParseError("missing f32raw magic \"PF32\"", offset);
    std::size_t pos = 5;
    std::size_t eol = pos;
    while (eol < block.size() && block[eol] != '\n')
        ++eol;
    if (eol == block.size())
        throw ParseError("unterminated f32raw dimension line", offset + pos);
    std::string line(block.begin() + pos, block.begin() + eol);
    std::istringstream in(line);
    long long width = -1, height = -1;
    std::string rest;
    if (!(in >> width >> height) || (in >> rest) || width <= 0 || height <= 0)
        throw ParseError("malformed f32raw dimension line \"" + line + "\"", offset + pos);
    pos = eol + 1;
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (block.size() - pos < count * 4)
        throw ParseError("truncated f32raw data", offset + block.size());
    Matrix m(static_cast<std::size_t>(height), static_cast<std::size_t>(width));
    for (std::size_t i = 0; i < count; ++i)
        m.data()[i] = load_f32_le(block.data() + pos + 4 * i);
    offset += pos + count * 4;
    return m;
}

Matrix read_f32raw(std::span<const std::uint8_t> bytes)
{
    std::size_t offset = 0;
    return read_f32raw(bytes, offset);
}

std::vector<std::uint8_t> write_f32raw(const Matrix& m)
{
    const std::string header =
        "PF32\n" + std::to_string(m.cols()) + " " + std::to_string(m.rows()) + "\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + 4 * m.size());
    for (double v : m.data())
        append_f32_le(out, static_cast<float>(v));
    return out;
}

Patch patch_from_f32raw(std::span<const std::uint8_t> bytes)
{
    Matrix m = read_f32raw(bytes);
    return Patch(static_cast<int>(m.cols()), static_cast<int>(m.rows()), std::move(m.data()));
}

std::vector<std::uint8_t> patch_to_f32raw(const Patch& patch)
{
    return write_f32raw(Matrix(static_cast<std::size_t>(patch.height()),
                               static_cast<std::size_t>(patch.width()), patch.pixels()));
}

// ---------------------------------------------------------------- processing

Patch histogram_equalize(const Patch& patch, int bins)
{
    if (bins < 2)
        throw ConfigError("histogram_equalize needs at least 2 bins, got " + std::to_string(bins));
    const auto& px = patch.pixels();
    std::vector<int> bin_of(px.size());
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < px.size(); ++i) {
        const int b = std::min(static_cast<int>(std::floor(px[i] * bins)), bins - 1);
        bin_of[i] = b;
        ++counts[static_cast<std::size_t>(b)];
    }
    std::vector<double> cdf(counts.size());
    std::size_t running = 0;
    const double total = static_cast<double>(px.size());
    for (std::size_t b = 0; b < counts.size(); ++b) {
        running += counts[b];
        cdf[b] = static_cast<double>(running) / total;
    }
    std::vector<double> out(px.size());
    for (std::size_t i = 0; i < px.size(); ++i)
        out[i] = cdf[static_cast<std::size_t>(bin_of[i])];
    return Patch(patch.width(), patch.height(), std::move(out), patch.label());
}

Patch block_average(const Patch& patch, int factor)
{
    if (factor < 1 || patch.width() % factor != 0 || patch.height() % factor != 0)
        throw ConfigError("cannot block-average " + std::to_string(patch.width()) + "x" +
                          std::to_string(patch.height()) + " by " + std::to_string(factor));
    const int w = patch.width() / factor, h = patch.height() / factor;
    const double inv = 1.0 / (factor * factor);
    std::vector<double> out(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sum = 0.0;
            for (int j = 0; j < factor; ++j)
                for (int i = 0; i < factor; ++i)
                    sum += patch.at(x * factor + i, y * factor + j);
            out[static_cast<std::size_t>(y) * w + x] = std::clamp(sum * inv, 0.0, 1.0);
        }
    return Patch(w, h, std::move(out), patch.label());
}

Point crop_origin(int image_width, int image_height, Point center, int size)
{
    const int x0 = std::clamp(center.x - size / 2, 0, image_width - size);
    const int y0 = std::clamp(center.y - size / 2, 0, image_height - size);
    return {x0, y0};
}

Patch extract_patch(const Patch& image, Point center, int size, Label label)
{
    if (size <= 0)
        throw ConfigError("patch size must be positive");
    if (image.width() < size || image.height() < size)
        throw ConfigError("image " + std::to_string(image.width()) + "x" +
                          std::to_string(image.height()) + " is smaller than patch size " +
                          std::to_string(size));
    if (center.x < 0 || center.y < 0 || center.x >= image.width() || center.y >= image.height())
        throw ConfigError("centre (" + std::to_string(center.x) + "," + std::to_string(center.y) +
                          ") outside image");
    const Point origin = crop_origin(image.width(), image.height(), center, size);
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(size) * size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            out.push_back(image.at(origin.x + x, origin.y + y));
    return Patch(size, size, std::move(out), label);
}

// ---------------------------------------------------------------- manifests

std::size_t Manifest::count(Label label) const
{
    return static_cast<std::size_t>(
        std::count_if(entries.begin(), entries.end(), [&](const auto& e) { return e.label == label; }));
}

namespace {

std::vector<std::string_view> split_commas(std::string_view line)
{
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

std::optional<int> parse_int(std::string_view s)
{
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        return std::nullopt;
    return v;
}

} // namespace

Manifest load_manifest(std::string_view text)
{
    Manifest manifest;
    std::set<std::string, std::less<>> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto eol = text.find('\n', pos);
        if (eol == std::string_view::npos)
            eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty())
            continue;
        if (line_no == 1 && line == kManifestHeader)
            continue;

        const auto where = "manifest line " + std::to_string(line_no);
        const auto fields = split_commas(line);
        if (fields.size() != 2 && fields.size() != 4)
            throw ConfigError(where + ": expected path,label[,x,y]");
        ManifestEntry entry;
        entry.path = std::string(fields[0]);
        if (entry.path.empty())
            throw ConfigError(where + ": empty path");
        const auto label = parse_label(fields[1]);
        if (!label)
            throw ConfigError(where + ": unknown label \"" + std::string(fields[1]) + "\"");
        entry.label = *label;
        if (fields.size() == 4 && !(fields[2].empty() && fields[3].empty())) {
            const auto x = parse_int(fields[2]);
            const auto y = parse_int(fields[3]);
            if (!x || !y)
                throw ConfigError(where + ": non-integer coordinates");
            entry.center = Point{*x, *y};
        }
        if (!seen.insert(entry.path).second)
            throw ConfigError(where + ": duplicate path \"" + entry.path + "\"");
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

std::string format_manifest(const Manifest& manifest)
{
    std::string out(kManifestHeader);
    out += '\n';
    for (const auto& e : manifest.entries) {
        out += e.path;
        out += ',';
        out += label_token(e.label);
        out += ',';
        if (e.center)
            out += std::to_string(e.center->x) + "," + std::to_string(e.center->y);
        else
            out += ',';
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------- files

std::vector<std::uint8_t> read_file(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError("read failed: " + path);
    return bytes;
}

std::string read_text_file(const std::string& path)
{
    const auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot create " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError("write failed: " + path);
}

void write_text_file(const std::string& path, std::string_view text)
{
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

} // namespace mammo
