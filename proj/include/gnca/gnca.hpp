#pragma once

#include "gnca/config.hpp"
#include "gnca/errors.hpp"
#include "gnca/graph.hpp"
#include "gnca/metrics.hpp"
#include "gnca/model.hpp"
#include "gnca/optim.hpp"
#include "gnca/presets.hpp"
#include "gnca/rng.hpp"
#include "gnca/rules.hpp"
#include "gnca/tensor.hpp"
#include "gnca/trainers.hpp"
