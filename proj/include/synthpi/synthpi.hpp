// Umbrella header.
#pragma once

#include "synthpi/common.hpp"
#include "synthpi/constraints.hpp"
#include "synthpi/fit.hpp"
#include "synthpi/insample.hpp"
#include "synthpi/intervals.hpp"
#include "synthpi/montecarlo.hpp"
#include "synthpi/outsample.hpp"
#include "synthpi/panel.hpp"
#include "synthpi/qclp.hpp"
#include "synthpi/regression.hpp"
#include "synthpi/rng.hpp"
#include "synthpi/stats.hpp"
#include "synthpi/threading.hpp"
