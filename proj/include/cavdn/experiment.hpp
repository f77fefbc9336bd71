#pragma once

#include "cavdn/experiment/charts.hpp"
#include "cavdn/experiment/config.hpp"
#include "cavdn/experiment/metrics.hpp"
#include "cavdn/experiment/runner.hpp"
