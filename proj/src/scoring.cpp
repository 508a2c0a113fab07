#include "mammo/scoring.hpp"

#include "mammo/error.hpp"

#include <algorithm>
#include <fmt/format.h>

namespace mammo {

namespace {

constexpr std::array<double, 6> kLevelProbs = {0.95, 0.77, 0.59, 0.41, 0.23, 0.05};
constexpr std::array<std::string_view, 6> kLevelTokens = {
    "extremely_real", "moderately_real", "slightly_real",
    "slightly_fake",  "moderately_fake", "extremely_fake",
};

} // namespace

std::size_t level_index(ConfidenceLevel level) { return static_cast<std::size_t>(level); }

double level_to_prob(ConfidenceLevel level) { return kLevelProbs[level_index(level)]; }

ConfidenceLevel mirror(ConfidenceLevel level) { return kConfidenceLevels[5 - level_index(level)]; }

std::string_view level_token(ConfidenceLevel level) { return kLevelTokens[level_index(level)]; }

std::optional<ConfidenceLevel> parse_level(std::string_view token)
{
    for (std::size_t i = 0; i < kLevelTokens.size(); ++i)
        if (token == kLevelTokens[i] || (token.size() == 1 && token[0] == static_cast<char>('1' + i)))
            return kConfidenceLevels[i];
    return std::nullopt;
}

std::string_view truth_token(Truth truth) { return truth == Truth::Real ? "real" : "synthetic"; }

std::optional<Truth> parse_truth(std::string_view token)
{
    if (token == "real")
        return Truth::Real;
    if (token == "synthetic")
        return Truth::Synthetic;
    return std::nullopt;
}

std::optional<Truth> truth_of(Label label)
{
    if (label == Label::RealLesion)
        return Truth::Real;
    if (label == Label::SyntheticLesion)
        return Truth::Synthetic;
    return std::nullopt;
}

double accuracy(std::span<const Rating> ratings, double threshold)
{
    if (ratings.empty())
        throw ConfigError("accuracy of an empty rating list");
    std::size_t correct = 0;
    for (const auto& r : ratings) {
        const bool called_real = level_to_prob(r.level) > threshold;
        if (called_real == (r.truth == Truth::Real))
            ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(ratings.size());
}

std::vector<RocPoint> roc_curve(std::span<const Rating> ratings)
{
    // Counts per level, which is the same as per distinct score.
    std::array<std::size_t, 6> real{}, fake{};
    for (const auto& r : ratings)
        ++(r.truth == Truth::Real ? real : fake)[level_index(r.level)];
    std::size_t n_real = 0, n_fake = 0;
    for (std::size_t i = 0; i < 6; ++i) {
        n_real += real[i];
        n_fake += fake[i];
    }
    if (n_real == 0 || n_fake == 0)
        throw ConfigError("ROC needs both real and synthetic truths");

    std::vector<RocPoint> points{{0.0, 0.0}};
    std::size_t tp = 0, fp = 0;
    // Levels are ordered by decreasing score.
    for (std::size_t i = 0; i < 6; ++i) {
        if (real[i] + fake[i] == 0)
            continue;
        tp += real[i];
        fp += fake[i];
        points.push_back({static_cast<double>(fp) / n_fake, static_cast<double>(tp) / n_real});
    }
    if (points.back() != RocPoint{1.0, 1.0})
        points.push_back({1.0, 1.0});
    return points;
}

double auc(std::span<const RocPoint> points)
{
    double area = 0.0;
    for (std::size_t k = 1; k < points.size(); ++k)
        area += (points[k].fpr - points[k - 1].fpr) * (points[k].tpr + points[k - 1].tpr) / 2.0;
    return area;
}

RocReport make_report(std::span<const Rating> ratings)
{
    RocReport report;
    report.points = roc_curve(ratings);
    report.auc = auc(report.points);
    report.accuracy = accuracy(ratings);
    for (const auto& r : ratings) {
        ++(r.truth == Truth::Real ? report.n_real : report.n_fake);
        ++report.level_counts[level_index(r.level)];
    }
    return report;
}

std::string format_roc_points(std::span<const RocPoint> points)
{
    std::string out = "fpr,tpr\n";
    for (const auto& p : points)
        out += fmt::format("{:.6f},{:.6f}\n", p.fpr, p.tpr);
    return out;
}

std::string format_report(const RocReport& report)
{
    std::string out;
    out += fmt::format("accuracy:{:.6f}\n", report.accuracy);
    out += fmt::format("auc:{:.6f}\n", report.auc);
    out += fmt::format("n_real:{}\n", report.n_real);
    out += fmt::format("n_fake:{}\n", report.n_fake);
    for (std::size_t i = 0; i < 6; ++i)
        out += fmt::format("count_{}:{}\n", kLevelTokens[i], report.level_counts[i]);
    out += format_roc_points(report.points);
    return out;
}

std::vector<ManifestEntry> sample_balanced(const Manifest& manifest, std::size_t n_per_class, Rng& rng)
{
    std::vector<ManifestEntry> picked;
    for (Label label : {Label::RealLesion, Label::SyntheticLesion}) {
        std::vector<const ManifestEntry*> pool;
        for (const auto& e : manifest.entries)
            if (e.label == label)
                pool.push_back(&e);
        if (pool.size() < n_per_class)
            throw ConfigError(fmt::format("manifest has {} {} entries, need {}", pool.size(),
                                          label_token(label), n_per_class));
        // Partial Fisher-Yates: the first n_per_class slots are a uniform sample.
        for (std::size_t i = 0; i < n_per_class; ++i) {
            std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
            picked.push_back(*pool[i]);
        }
    }
    shuffle(picked, rng);
    return picked;
}

} // namespace mammo
