#pragma once

// Umbrella header for the embedded hyperspectral band-selection library.

#include "specband/adam.hpp"
#include "specband/checkpoint.hpp"
#include "specband/common.hpp"
#include "specband/harness.hpp"
#include "specband/heatmap.hpp"
#include "specband/hsi.hpp"
#include "specband/kv.hpp"
#include "specband/mcd.hpp"
#include "specband/metrics.hpp"
#include "specband/model.hpp"
#include "specband/ops.hpp"
#include "specband/tensor.hpp"
#include "specband/train.hpp"
