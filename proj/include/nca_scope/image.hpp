#pragma once

#include <string>

#include "nca_scope/grid.hpp"
#include "nca_scope/trajectory.hpp"

namespace nca_scope {

/// Loads a PNG as a training target with visible_channels(mode) channels.
/// RGBA targets are premultiplied by alpha; `pad` adds an empty border.
GridState load_target_png(const std::string& path, ChannelMode mode, int pad = 0);

/// Solid disc of the given colour centred in an H x W target.
GridState disc_target(int height, int width, double radius, const Colour& rgb, ChannelMode mode);

/// Solid axis-aligned square of side `size` centred in the target.
GridState square_target(int height, int width, int size, const Colour& rgb, ChannelMode mode);

}  // namespace nca_scope
