#pragma once

#include "sac/potential.hpp"
#include "sac/rng.hpp"
#include "sac/linalg.hpp"
#include "sac/grid.hpp"
#include "sac/noise.hpp"
#include "sac/stepper.hpp"
#include "sac/experiments.hpp"
#include "sac/config.hpp"
#include "sac/cli.hpp"
