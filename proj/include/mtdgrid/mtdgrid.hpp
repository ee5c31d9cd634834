#pragma once

#include "mtdgrid/adversarial.hpp"
#include "mtdgrid/attack.hpp"
#include "mtdgrid/config.hpp"
#include "mtdgrid/detector.hpp"
#include "mtdgrid/error.hpp"
#include "mtdgrid/estimation.hpp"
#include "mtdgrid/experiments.hpp"
#include "mtdgrid/grid.hpp"
#include "mtdgrid/metrics.hpp"
#include "mtdgrid/opf.hpp"
#include "mtdgrid/physics_mtd.hpp"
#include "mtdgrid/pool.hpp"
#include "mtdgrid/qp.hpp"
#include "mtdgrid/random.hpp"
#include "mtdgrid/subspace.hpp"
