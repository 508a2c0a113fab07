#pragma once

#include "mammo/patchio.hpp"
#include "mammo/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mammo {

/// The six-option observer scale, ordered from most-real to most-fake.
enum class ConfidenceLevel {
    ExtremelyReal,
    ModeratelyReal,
    SlightlyReal,
    SlightlyFake,
    ModeratelyFake,
    ExtremelyFake,
};

inline constexpr std::array<ConfidenceLevel, 6> kConfidenceLevels = {
    ConfidenceLevel::ExtremelyReal, ConfidenceLevel::ModeratelyReal, ConfidenceLevel::SlightlyReal,
    ConfidenceLevel::SlightlyFake,  ConfidenceLevel::ModeratelyFake, ConfidenceLevel::ExtremelyFake,
};

/// Probability-of-real assigned to each level: 0.95, 0.77, 0.59, 0.41, 0.23, 0.05.
double level_to_prob(ConfidenceLevel level);

/// The level at the same confidence on the opposite side of the scale.
ConfidenceLevel mirror(ConfidenceLevel level);

std::size_t level_index(ConfidenceLevel level);
std::string_view level_token(ConfidenceLevel level);
/// Accepts the snake_case token ("moderately_fake") or the 1-based position "1".."6".
std::optional<ConfidenceLevel> parse_level(std::string_view token);

enum class Truth { Real, Synthetic };

std::string_view truth_token(Truth truth);
std::optional<Truth> parse_truth(std::string_view token);
/// RealLesion -> Real, SyntheticLesion -> Synthetic; anything else has no truth.
std::optional<Truth> truth_of(Label label);

struct Rating {
    std::string item_id;
    Truth truth = Truth::Real;
    ConfidenceLevel level = ConfidenceLevel::ExtremelyReal;
    std::string observer_id;
    std::int64_t timestamp_ms = 0; ///< Unix epoch, UTC.

    friend bool operator==(const Rating&, const Rating&) = default;
};

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
    friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct RocReport {
    std::vector<RocPoint> points;
    double auc = 0.0;
    double accuracy = 0.0;
    std::size_t n_real = 0;
    std::size_t n_fake = 0;
    std::array<std::size_t, 6> level_counts{}; ///< Indexed by level_index.
};

/// Fraction correct when an item is called Real iff its probability exceeds
/// `threshold`. Throws ConfigError on an empty list.
double accuracy(std::span<const Rating> ratings, double threshold = 0.5);

/// ROC with Real as the positive class. One point per distinct score (items
/// sharing a score enter together), from (0,0) to (1,1). Throws ConfigError
/// unless both truths are present.
std::vector<RocPoint> roc_curve(std::span<const Rating> ratings);

/// Trapezoidal area under a monotone ROC point list.
double auc(std::span<const RocPoint> points);

RocReport make_report(std::span<const Rating> ratings);

/// "key:value" lines followed by "fpr,tpr" rows.
std::string format_report(const RocReport& report);
std::string format_roc_points(std::span<const RocPoint> points);

/// Draws n_per_class RealLesion and n_per_class SyntheticLesion entries
/// without replacement, then shuffles the union. Throws ConfigError when
/// either class is short.
std::vector<ManifestEntry> sample_balanced(const Manifest& manifest, std::size_t n_per_class, Rng& rng);

/// In-place Fisher-Yates driven by Rng::below.
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng)
{
    for (std::size_t i = items.size(); i > 1; --i)
        std::swap(items[i - 1], items[rng.below(i)]);
}

} // namespace mammo
