#pragma once

#include "dcorsel/additive.hpp"
#include "dcorsel/covariate.hpp"
#include "dcorsel/csv_io.hpp"
#include "dcorsel/dcor.hpp"
#include "dcorsel/fpca.hpp"
#include "dcorsel/memory.hpp"
#include "dcorsel/metrics.hpp"
#include "dcorsel/random.hpp"
#include "dcorsel/report.hpp"
#include "dcorsel/scenarios.hpp"
#include "dcorsel/selector.hpp"
#include "dcorsel/spline.hpp"
