#pragma once

#include "amp_evolve/error.hpp"
#include "amp_evolve/empirical_stats.hpp"
#include "amp_evolve/rng.hpp"
#include "amp_evolve/distributions.hpp"
#include "amp_evolve/quadrature.hpp"
#include "amp_evolve/ensembles.hpp"
#include "amp_evolve/denoisers.hpp"
#include "amp_evolve/amp.hpp"
#include "amp_evolve/state_evolution.hpp"
#include "amp_evolve/verification.hpp"
#include "amp_evolve/config.hpp"
#include "amp_evolve/io.hpp"
#include "amp_evolve/experiment.hpp"
