#pragma once

#include "bcbf/bcbf_filter.hpp"
#include "bcbf/belief_dynamics.hpp"
#include "bcbf/dual.hpp"
#include "bcbf/errors.hpp"
#include "bcbf/gaussian_belief.hpp"
#include "bcbf/log.hpp"
#include "bcbf/lqr.hpp"
#include "bcbf/models.hpp"
#include "bcbf/obstacle.hpp"
#include "bcbf/qp.hpp"
#include "bcbf/scenario.hpp"
#include "bcbf/sim_harness.hpp"
#include "bcbf/special_functions.hpp"
