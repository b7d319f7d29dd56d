#pragma once

#include "sst/geometry/marching_cubes.hpp"
#include "sst/geometry/mesh.hpp"
#include "sst/geometry/mesh_io.hpp"
#include "sst/geometry/solid.hpp"
#include "sst/geometry/voxel.hpp"
