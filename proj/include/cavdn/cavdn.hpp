#pragma once

#include "cavdn/environment.hpp"
#include "cavdn/errors.hpp"
#include "cavdn/experiment.hpp"
#include "cavdn/learner.hpp"
#include "cavdn/malfunction.hpp"
#include "cavdn/nn.hpp"
#include "cavdn/relational.hpp"
#include "cavdn/schedule.hpp"
