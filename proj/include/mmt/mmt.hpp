#pragma once

#include "mmt/error.hpp"
#include "mmt/geometry.hpp"
#include "mmt/surface_extraction.hpp"
#include "mmt/voxel_field.hpp"
#include "mmt/pointshell_render.hpp"
#include "mmt/metrics.hpp"
#include "mmt/impedance_solver.hpp"
#include "mmt/scan_sim.hpp"
#include "mmt/evaluation.hpp"
#include "mmt/io.hpp"
#include "mmt/config.hpp"
