#pragma once

#include "bitstorm/dataset.hpp"
#include "bitstorm/ensemble.hpp"
#include "bitstorm/error.hpp"
#include "bitstorm/hw/daalen.hpp"
#include "bitstorm/hw/lfsr.hpp"
#include "bitstorm/hw/mux_rounder.hpp"
#include "bitstorm/inference.hpp"
#include "bitstorm/model.hpp"
#include "bitstorm/model_io.hpp"
#include "bitstorm/projection.hpp"
#include "bitstorm/random.hpp"
#include "bitstorm/rational.hpp"
#include "bitstorm/tensor.hpp"
#include "bitstorm/train.hpp"

namespace bitstorm {
inline constexpr const char* version = "0.1.0";
}
