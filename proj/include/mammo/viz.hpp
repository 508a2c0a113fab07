#pragma once

#include "mammo/patchio.hpp"
#include "mammo/scoring.hpp"
#include "mammo/tsne.hpp"

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mammo {

enum class MarkerShape { Cross, Circle, Triangle };

struct MarkerStyle {
    MarkerShape shape = MarkerShape::Circle;
    std::string colour;
    std::string name; ///< legend text
};

struct PlotStyle {
    std::map<Label, MarkerStyle> markers;
    int width = 800;
    int height = 800;
    double padding = 0.05; ///< fraction of the data range added on each side
    double marker_size = 4.0;

    /// Real lesions as red crosses, synthetic lesions as green circles and
    /// normal tissue as purple triangles.
    static PlotStyle lesion_clusters();
};

/// Linear map from a data interval onto a pixel interval. pixel_lo may be
/// larger than pixel_hi to flip the axis.
struct AxisMap {
    double data_lo = 0.0;
    double data_hi = 1.0;
    double pixel_lo = 0.0;
    double pixel_hi = 1.0;

    /// Covers the values' extent plus `padding` of the range on each side.
    /// A degenerate extent is widened to +-0.5.
    static AxisMap fit(std::span<const double> values, double padding, double pixel_lo, double pixel_hi);

    double operator()(double v) const { return pixel_lo + (v - data_lo) / (data_hi - data_lo) * (pixel_hi - pixel_lo); }
};

/// One marker element per point. Throws ConfigError listing any label that
/// has no style entry, or on an empty embedding.
std::string scatter_svg(const Embedding& embedding, const PlotStyle& style = PlotStyle::lesion_clusters());

/// Unit-square ROC plot with the chance diagonal and "AUC = x.xx".
std::string roc_svg(const RocReport& report);

/// Row-major grid; missing cells at the end are black. Throws ConfigError
/// on mismatched tile sizes, no patches, or zero columns.
Patch montage(std::span<const Patch> patches, std::size_t columns);

} // namespace mammo
