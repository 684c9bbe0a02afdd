#pragma once

#include "qvmart/error.hpp"
#include "qvmart/format.hpp"
#include "qvmart/rng.hpp"
#include "qvmart/parallel.hpp"
#include "qvmart/stats.hpp"
#include "qvmart/path_core.hpp"
#include "qvmart/simulate.hpp"
#include "qvmart/strategy.hpp"
#include "qvmart/wealth.hpp"
#include "qvmart/inference.hpp"
#include "qvmart/counterexample.hpp"
#include "qvmart/recipes.hpp"
#include "qvmart/io.hpp"
