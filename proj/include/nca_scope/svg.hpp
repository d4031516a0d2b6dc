#pragma once

#include <string>

#include "nca_scope/field.hpp"
#include "nca_scope/homology.hpp"
#include "nca_scope/trajectory.hpp"

namespace nca_scope {

struct SvgStyle {
    int width = 640;
    int height = 640;
    int margin = 48;
    double marker_radius = 3.0;
};

/// Scatter of the first two columns, one circle per point, fill = point colour clamped to [0,1].
std::string scatter_svg(const PointCloud& embedding, const SvgStyle& style = {});

/// Birth on x, death on y, diagonal drawn, one colour per dimension.
/// Essential classes sit on a dashed line above the finite range.
std::string diagram_svg(const PersistenceDiagram& diagram, const SvgStyle& style = {});

/// Scatter plus one arrow per valid grid point. Arrow length in latent units is
/// vector * arrow_scale.
std::string field_svg(const VectorField& field, const PointCloud& embedding, double arrow_scale = 1.0,
                      const SvgStyle& style = {});

void emit_scatter_svg(const PointCloud& embedding, const std::string& path, const SvgStyle& style = {});
void emit_diagram_svg(const PersistenceDiagram& diagram, const std::string& path, const SvgStyle& style = {});
void emit_field_svg(const VectorField& field, const PointCloud& embedding, const std::string& path,
                    double arrow_scale = 1.0, const SvgStyle& style = {});

}  // namespace nca_scope
