// Umbrella header.
#pragma once

#include "wattscope/analysis.hpp"
#include "wattscope/image.hpp"
#include "wattscope/kvfile.hpp"
#include "wattscope/meter.hpp"
#include "wattscope/runlog.hpp"
#include "wattscope/runner.hpp"
#include "wattscope/sampling.hpp"
#include "wattscope/simulate.hpp"
#include "wattscope/static_estimate.hpp"
#include "wattscope/types.hpp"
