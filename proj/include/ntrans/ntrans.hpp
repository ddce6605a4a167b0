#pragma once

#include "ntrans/bench.hpp"
#include "ntrans/camera.hpp"
#include "ntrans/common.hpp"
#include "ntrans/neuraltau.hpp"
#include "ntrans/nn.hpp"
#include "ntrans/oracle.hpp"
#include "ntrans/raygeom.hpp"
#include "ntrans/render.hpp"
#include "ntrans/scene.hpp"
#include "ntrans/stats.hpp"
#include "ntrans/tmap.hpp"
