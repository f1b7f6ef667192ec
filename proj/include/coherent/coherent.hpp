#pragma once

#include "coherent/core.hpp"
#include "coherent/error.hpp"
#include "coherent/flow.hpp"
#include "coherent/io.hpp"
#include "coherent/keyvalue.hpp"
#include "coherent/losses.hpp"
#include "coherent/metrics.hpp"
#include "coherent/png.hpp"
#include "coherent/synth.hpp"
