#include "nca_scope/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "nca_scope/common.hpp"

namespace nca_scope {

namespace {

std::string fmt(const char* pattern, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, pattern, args...);
    return buf;
}

std::string rgb(const Colour& c) {
    auto channel = [](double v) { return static_cast<int>(std::lround(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * 255.0)); };
    return fmt("#%02x%02x%02x", channel(c[0]), channel(c[1]), channel(c[2]));
}

/// Maps a data-space box onto the plot area, y pointing up.
struct Frame {
    double x0, x1, y0, y1;
    const SvgStyle& style;

    double px(double x) const { return style.margin + (x - x0) / (x1 - x0) * (style.width - 2 * style.margin); }
    double py(double y) const { return style.height - style.margin - (y - y0) / (y1 - y0) * (style.height - 2 * style.margin); }
};

Frame frame_for(double x0, double x1, double y0, double y1, const SvgStyle& style) {
    auto widen = [](double& lo, double& hi) {
        if (!(hi > lo)) {
            lo -= 0.5;
            hi += 0.5;
        }
        const double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
    };
    widen(x0, x1);
    widen(y0, y1);
    return {x0, x1, y0, y1, style};
}

Frame embedding_frame(const PointCloud& cloud, const SvgStyle& style) {
    if (cloud.size() == 0) return frame_for(0, 1, 0, 1, style);
    const double x0 = cloud.points.col(0).minCoeff(), x1 = cloud.points.col(0).maxCoeff();
    double y0 = 0.0, y1 = 0.0;
    if (cloud.dim() > 1) y0 = cloud.points.col(1).minCoeff(), y1 = cloud.points.col(1).maxCoeff();
    return frame_for(x0, x1, y0, y1, style);
}

void open_svg(std::ostringstream& out, const SvgStyle& style) {
    out << fmt("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" viewBox=\"0 0 %d %d\">\n",
               style.width, style.height, style.width, style.height);
    out << fmt("<rect width=\"%d\" height=\"%d\" fill=\"#ffffff\"/>\n", style.width, style.height);
}

void axes(std::ostringstream& out, const Frame& f, const char* xlabel, const char* ylabel) {
    const auto& s = f.style;
    out << fmt("<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" fill=\"none\" stroke=\"#444444\"/>\n", s.margin,
               s.margin, s.width - 2 * s.margin, s.height - 2 * s.margin);
    out << fmt("<text x=\"%d\" y=\"%d\" font-size=\"12\" text-anchor=\"middle\">%s</text>\n", s.width / 2,
               s.height - s.margin / 3, xlabel);
    out << fmt("<text x=\"%d\" y=\"%d\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 %d %d)\">%s</text>\n",
               s.margin / 3, s.height / 2, s.margin / 3, s.height / 2, ylabel);
    out << fmt("<text x=\"%d\" y=\"%d\" font-size=\"10\">%.4g</text>\n", s.margin, s.height - s.margin + 14, f.x0);
    out << fmt("<text x=\"%d\" y=\"%d\" font-size=\"10\" text-anchor=\"end\">%.4g</text>\n", s.width - s.margin,
               s.height - s.margin + 14, f.x1);
    out << fmt("<text x=\"%d\" y=\"%d\" font-size=\"10\" text-anchor=\"end\">%.4g</text>\n", s.margin - 4,
               s.height - s.margin, f.y0);
    out << fmt("<text x=\"%d\" y=\"%d\" font-size=\"10\" text-anchor=\"end\">%.4g</text>\n", s.margin - 4,
               s.margin + 10, f.y1);
}

void points(std::ostringstream& out, const PointCloud& cloud, const Frame& f) {
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const double y = cloud.dim() > 1 ? cloud.points(r, 1) : 0.0;
        const Colour c = i < cloud.colour.size() ? cloud.colour[i] : Colour{0.3, 0.3, 0.3};
        out << fmt("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.2f\" fill=\"%s\" stroke=\"#333333\" stroke-width=\"0.3\"/>\n",
                   f.px(cloud.points(r, 0)), f.py(y), f.style.marker_radius, rgb(c).c_str());
    }
}

void write_file(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << text;
}

}  // namespace

std::string scatter_svg(const PointCloud& embedding, const SvgStyle& style) {
    std::ostringstream out;
    open_svg(out, style);
    const Frame f = embedding_frame(embedding, style);
    axes(out, f, "component 1", "component 2");
    points(out, embedding, f);
    out << "</svg>\n";
    return out.str();
}

std::string diagram_svg(const PersistenceDiagram& diagram, const SvgStyle& style) {
    static const char* kDimColour[] = {"#1f77b4", "#d62728", "#2ca02c"};
    double top = diagram.max_finite_death();
    for (const auto& iv : diagram.intervals) top = std::max(top, iv.birth);
    if (!(top > 0.0)) top = 1.0;
    const double inf_level = top * 1.1;
    const Frame f = frame_for(0.0, inf_level, 0.0, inf_level, style);

    std::ostringstream out;
    open_svg(out, style);
    axes(out, f, "birth", "death");
    out << fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#888888\"/>\n", f.px(0), f.py(0),
               f.px(inf_level), f.py(inf_level));
    out << fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#888888\" stroke-dasharray=\"4 3\"/>\n",
               f.px(0), f.py(inf_level), f.px(inf_level), f.py(inf_level));
    out << fmt("<text x=\"%.2f\" y=\"%.2f\" font-size=\"10\">inf</text>\n", f.px(0) + 4, f.py(inf_level) - 4);
    for (const auto& iv : diagram.sorted()) {
        if (iv.dim < 0 || iv.dim > 2) continue;
        const double death = iv.infinite() ? inf_level : iv.death;
        out << fmt("<circle cx=\"%.2f\" cy=\"%.2f\" r=\"%.2f\" fill=\"%s\" fill-opacity=\"0.8\"/>\n", f.px(iv.birth),
                   f.py(death), style.marker_radius, kDimColour[iv.dim]);
    }
    for (int d = 0; d <= 2; ++d)
        out << fmt("<text x=\"%d\" y=\"%d\" font-size=\"12\" fill=\"%s\">H%d</text>\n", style.width - style.margin - 30,
                   style.height - style.margin - 12 - 16 * (2 - d), kDimColour[d], d);
    out << "</svg>\n";
    return out.str();
}

std::string field_svg(const VectorField& field, const PointCloud& embedding, double arrow_scale, const SvgStyle& style) {
    std::ostringstream out;
    open_svg(out, style);
    out << "<defs><marker id=\"head\" markerWidth=\"6\" markerHeight=\"6\" refX=\"5\" refY=\"3\" orient=\"auto\">"
           "<path d=\"M0,0 L6,3 L0,6 z\" fill=\"#222222\"/></marker></defs>\n";
    const Frame f = embedding_frame(embedding, style);
    axes(out, f, "component 1", "component 2");
    points(out, embedding, f);
    for (std::size_t i = 0; i < field.size(); ++i) {
        if (!field.valid[i]) continue;
        const auto r = static_cast<Eigen::Index>(i);
        const double x = field.grid(r, 0), y = field.grid(r, 1);
        const double x2 = x + field.vectors(r, 0) * arrow_scale, y2 = y + field.vectors(r, 1) * arrow_scale;
        out << fmt("<line x1=\"%.2f\" y1=\"%.2f\" x2=\"%.2f\" y2=\"%.2f\" stroke=\"#222222\" stroke-width=\"1\" marker-end=\"url(#head)\"/>\n",
                   f.px(x), f.py(y), f.px(x2), f.py(y2));
    }
    out << "</svg>\n";
    return out.str();
}

void emit_scatter_svg(const PointCloud& embedding, const std::string& path, const SvgStyle& style) {
    write_file(scatter_svg(embedding, style), path);
}

void emit_diagram_svg(const PersistenceDiagram& diagram, const std::string& path, const SvgStyle& style) {
    write_file(diagram_svg(diagram, style), path);
}

void emit_field_svg(const VectorField& field, const PointCloud& embedding, const std::string& path, double arrow_scale,
                    const SvgStyle& style) {
    write_file(field_svg(field, embedding, arrow_scale, style), path);
}

}  // namespace nca_scope
