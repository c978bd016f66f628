#pragma once

// Umbrella header for the steer alignment and retrieval toolkit.

#include "steer/config.hpp"
#include "steer/embedding.hpp"
#include "steer/error.hpp"
#include "steer/io.hpp"
#include "steer/linear_map.hpp"
#include "steer/mlp.hpp"
#include "steer/parallel.hpp"
#include "steer/privacy.hpp"
#include "steer/report.hpp"
#include "steer/retrieval.hpp"
#include "steer/synth.hpp"
