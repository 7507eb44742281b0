#pragma once

#include "cropcast/crop_selection.hpp"
#include "cropcast/csv.hpp"
#include "cropcast/error.hpp"
#include "cropcast/forest.hpp"
#include "cropcast/grid_io.hpp"
#include "cropcast/matrix.hpp"
#include "cropcast/mlp.hpp"
#include "cropcast/pipeline.hpp"
#include "cropcast/raster.hpp"
#include "cropcast/report.hpp"
#include "cropcast/rng.hpp"
#include "cropcast/season_features.hpp"
#include "cropcast/synth.hpp"
#include "cropcast/tables.hpp"
#include "cropcast/timeseries.hpp"
