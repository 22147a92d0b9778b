#pragma once

// Marching cubes with topological disambiguation.
//
// Face ambiguities are settled with the asymptotic decider. Interior
// ambiguities are settled exactly: the trilinear interpolant is cut into
// z-slices between its critical heights, which yields the connectivity of
// the positive and negative corners through the cell interior. A surface
// patch is emitted per (positive component, negative component) pair, so
// tunnels appear exactly when the interpolant has them.
//
// "Inside" is strictly greater than iso. Surfaces that reach the volume
// boundary are left open.

#include <array>
#include <vector>

#include "voxelweave/grid.hpp"
#include "voxelweave/mesh.hpp"

namespace vw {

// field holds one value per grid point (grid_spec::index order).
tri_mesh marching_cubes(const std::vector<double>& field, const grid_spec& spec, double iso);

// One mesh per non-void class whose slice crosses 0.5; the void slice is skipped.
std::vector<tri_mesh> extract_scene_meshes(const volume_grid& probs, double iso = 0.5);

namespace detail {
// Component labels of the corners of one cell (corner c at (c&1, c>>1&1,
// c>>2&1)) under the trilinear interpolant of g: sign = +1 groups corners
// with g > 0, sign = -1 groups the rest. Corners outside the set get
// arbitrary labels.
std::array<int, 8> corner_components(const std::array<double, 8>& g, int sign);
}  // namespace detail

}  // namespace vw
