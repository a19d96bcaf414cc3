#pragma once

#include "eprsim/bell_statistics.hpp"
#include "eprsim/coincidence_monitor.hpp"
#include "eprsim/config.hpp"
#include "eprsim/csv_io.hpp"
#include "eprsim/error.hpp"
#include "eprsim/experiment_harness.hpp"
#include "eprsim/optics_detector.hpp"
#include "eprsim/random.hpp"
#include "eprsim/source_model.hpp"
