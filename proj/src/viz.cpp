#include "mammo/viz.hpp"

#include "mammo/error.hpp"

#include <algorithm>
#include <fmt/format.h>
#include <set>

namespace mammo {

PlotStyle PlotStyle::lesion_clusters()
{
    PlotStyle s;
    s.markers[Label::RealLesion] = {MarkerShape::Cross, "#d62728", "Real lesions"};
    s.markers[Label::SyntheticLesion] = {MarkerShape::Circle, "#2ca02c", "Synthetic lesions"};
    s.markers[Label::Normal] = {MarkerShape::Triangle, "#7b3294", "Normal tissue"};
    return s;
}

AxisMap AxisMap::fit(std::span<const double> values, double padding, double pixel_lo, double pixel_hi)
{
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi - lo <= 0.0) {
        lo -= 0.5;
        hi += 0.5;
    } else {
        const double pad = (hi - lo) * padding;
        lo -= pad;
        hi += pad;
    }
    return {lo, hi, pixel_lo, pixel_hi};
}

namespace {

std::string svg_open(int width, int height)
{
    return fmt::format("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
                       "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{0}\" height=\"{1}\" "
                       "viewBox=\"0 0 {0} {1}\">\n"
                       "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
                       width, height);
}

std::string marker(const MarkerStyle& m, double x, double y, double s)
{
    switch (m.shape) {
    case MarkerShape::Cross:
        return fmt::format("<path class=\"point\" d=\"M{:.2f} {:.2f}L{:.2f} {:.2f}M{:.2f} {:.2f}L{:.2f} {:.2f}\" "
                           "stroke=\"{}\" stroke-width=\"1.5\" fill=\"none\"/>\n",
                           x - s, y - s, x + s, y + s, x - s, y + s, x + s, y - s, m.colour);
    case MarkerShape::Circle:
        return fmt::format("<circle class=\"point\" cx=\"{:.2f}\" cy=\"{:.2f}\" r=\"{:.2f}\" stroke=\"{}\" "
                           "stroke-width=\"1.5\" fill=\"none\"/>\n",
                           x, y, s, m.colour);
    case MarkerShape::Triangle:
        return fmt::format("<polygon class=\"point\" points=\"{:.2f},{:.2f} {:.2f},{:.2f} {:.2f},{:.2f}\" "
                           "stroke=\"{}\" stroke-width=\"1.5\" fill=\"none\"/>\n",
                           x, y - s, x - 0.866 * s, y + 0.5 * s, x + 0.866 * s, y + 0.5 * s, m.colour);
    }
    return {};
}

} // namespace

std::string scatter_svg(const Embedding& embedding, const PlotStyle& style)
{
    const std::size_t n = embedding.points.rows();
    if (n == 0)
        throw ConfigError("cannot plot an empty embedding");
    if (embedding.labels.size() != n)
        throw ConfigError("embedding labels do not match its points");

    std::set<Label> present(embedding.labels.begin(), embedding.labels.end());
    std::string missing;
    for (Label l : present)
        if (!style.markers.count(l))
            missing += (missing.empty() ? "" : ", ") + std::string(label_token(l));
    if (!missing.empty())
        throw ConfigError("no plot style for label(s): " + missing);

    std::vector<double> xs(n), ys(n);
    for (std::size_t i = 0; i < n; ++i) {
        xs[i] = embedding.points(i, 0);
        ys[i] = embedding.points(i, 1);
    }
    // Plot area leaves a right-hand strip for the legend.
    const double margin = 20.0;
    const double legend_w = 170.0;
    const double right = style.width - legend_w;
    const AxisMap mx = AxisMap::fit(xs, style.padding, margin, right - margin);
    const AxisMap my = AxisMap::fit(ys, style.padding, style.height - margin, margin);

    std::string out = svg_open(style.width, style.height);
    out += fmt::format("<rect class=\"frame\" x=\"{:.2f}\" y=\"{:.2f}\" width=\"{:.2f}\" height=\"{:.2f}\" "
                       "fill=\"none\" stroke=\"#444\"/>\n",
                       margin, margin, right - 2 * margin, style.height - 2 * margin);
    out += "<g class=\"points\">\n";
    for (std::size_t i = 0; i < n; ++i)
        out += marker(style.markers.at(embedding.labels[i]), mx(xs[i]), my(ys[i]), style.marker_size);
    out += "</g>\n<g class=\"legend\" font-family=\"sans-serif\" font-size=\"14\">\n";
    double ly = margin + 10.0;
    for (Label l : present) {
        const auto& m = style.markers.at(l);
        out += fmt::format("<rect x=\"{:.2f}\" y=\"{:.2f}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n", right + 5.0,
                           ly, m.colour);
        out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\">{}</text>\n", right + 24.0, ly + 11.0, m.name);
        ly += 22.0;
    }
    out += "</g>\n</svg>\n";
    return out;
}

std::string roc_svg(const RocReport& report)
{
    constexpr double size = 500.0, lo = 60.0, hi = 460.0;
    const AxisMap mx{0.0, 1.0, lo, hi};
    const AxisMap my{0.0, 1.0, hi, lo};

    std::string out = svg_open(static_cast<int>(size), static_cast<int>(size));
    out += fmt::format("<rect class=\"frame\" x=\"{0:.2f}\" y=\"{0:.2f}\" width=\"{1:.2f}\" height=\"{1:.2f}\" "
                       "fill=\"none\" stroke=\"#444\"/>\n",
                       lo, hi - lo);
    out += fmt::format("<line class=\"chance\" x1=\"{:.2f}\" y1=\"{:.2f}\" x2=\"{:.2f}\" y2=\"{:.2f}\" "
                       "stroke=\"#888\" stroke-dasharray=\"6,4\"/>\n",
                       mx(0.0), my(0.0), mx(1.0), my(1.0));
    std::string pts;
    for (const auto& p : report.points)
        pts += fmt::format("{}{:.2f},{:.2f}", pts.empty() ? "" : " ", mx(p.fpr), my(p.tpr));
    out += fmt::format("<polyline class=\"roc\" points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" "
                       "stroke-width=\"2\"/>\n",
                       pts);
    out += "<g font-family=\"sans-serif\" font-size=\"14\">\n";
    for (double t : {0.0, 0.5, 1.0}) {
        out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">{:.1f}</text>\n", mx(t), hi + 20.0,
                           t);
        out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">{:.1f}</text>\n", lo - 8.0,
                           my(t) + 5.0, t);
    }
    out += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"middle\">False positive rate</text>\n",
                       (lo + hi) / 2, size - 8.0);
    out += fmt::format("<text x=\"15\" y=\"{0:.2f}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {0:.2f})\">"
                       "True positive rate</text>\n",
                       (lo + hi) / 2);
    out += fmt::format("<text class=\"auc\" x=\"{:.2f}\" y=\"{:.2f}\" text-anchor=\"end\">AUC = {:.2f}</text>\n",
                       hi - 10.0, hi - 15.0, report.auc);
    out += "</g>\n</svg>\n";
    return out;
}

Patch montage(std::span<const Patch> patches, std::size_t columns)
{
    if (patches.empty())
        throw ConfigError("montage needs at least one patch");
    if (columns == 0)
        throw ConfigError("montage needs at least one column");
    const int w = patches.front().width(), h = patches.front().height();
    Label label = patches.front().label();
    for (const auto& p : patches) {
        if (p.width() != w || p.height() != h)
            throw ConfigError(fmt::format("montage tile {}x{} does not match {}x{}", p.width(), p.height(), w, h));
        if (p.label() != label)
            label = Label::Unlabeled;
    }
    const std::size_t rows = (patches.size() + columns - 1) / columns;
    const std::size_t out_w = columns * static_cast<std::size_t>(w);
    const std::size_t out_h = rows * static_cast<std::size_t>(h);
    std::vector<double> px(out_w * out_h, 0.0);
    for (std::size_t t = 0; t < patches.size(); ++t) {
        const std::size_t ox = (t % columns) * w, oy = (t / columns) * h;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                px[(oy + y) * out_w + ox + x] = patches[t].at(x, y);
    }
    return Patch(static_cast<int>(out_w), static_cast<int>(out_h), std::move(px), label);
}

} // namespace mammo
