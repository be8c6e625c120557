#pragma once

#include "vx/geometry.hpp"

namespace vx {

// Standard 256-case marching cubes over the corner lattice of an SDF grid.
// A corner is inside when value < iso (ties count as outside). Vertices are
// linearly interpolated on cut edges and welded via global edge keys, so the
// output is watertight on sign-consistent grids away from the domain
// boundary. Triangles are wound counterclockwise seen from outside
// (positive side). Zero-area triangles (below 1e-12) are dropped.
Mesh marching_cubes(const SdfGrid& grid, double iso = 0.0);

// Case-table introspection for tests: triangles (as edge-id triples) emitted
// for one cube sign configuration.
const std::vector<std::array<int, 3>>& marching_cubes_case(int config);

// Endpoints (corner ids 0..7, bit0=x bit1=y bit2=z) of cube edge 0..11.
std::array<int, 2> marching_cubes_edge(int edge);

}  // namespace vx
