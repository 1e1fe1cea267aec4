#pragma once

#include "conftune/calibration_map.hpp"
#include "conftune/conformal.hpp"
#include "conftune/dataset.hpp"
#include "conftune/errors.hpp"
#include "conftune/json_io.hpp"
#include "conftune/metrics.hpp"
#include "conftune/nonconformity.hpp"
#include "conftune/random.hpp"
#include "conftune/synth.hpp"
#include "conftune/tuner.hpp"
