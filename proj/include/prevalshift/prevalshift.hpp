#pragma once

#include "prevalshift/calibration.hpp"
#include "prevalshift/dataset.hpp"
#include "prevalshift/error.hpp"
#include "prevalshift/estimators.hpp"
#include "prevalshift/io.hpp"
#include "prevalshift/metrics.hpp"
#include "prevalshift/numerics.hpp"
#include "prevalshift/rng.hpp"
#include "prevalshift/simulation.hpp"
#include "prevalshift/tree.hpp"
