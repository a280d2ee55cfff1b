#pragma once

#include "fdd/core_data.hpp"
#include "fdd/diagnostics.hpp"
#include "fdd/error.hpp"
#include "fdd/estimators.hpp"
#include "fdd/inference.hpp"
#include "fdd/io.hpp"
#include "fdd/kernels_llr.hpp"
#include "fdd/parallel.hpp"
#include "fdd/simulation.hpp"
