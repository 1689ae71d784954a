#pragma once

#include "hdcate/error.hpp"
#include "hdcate/normal.hpp"
#include "hdcate/rng.hpp"
#include "hdcate/parallel.hpp"
#include "hdcate/penalized_regression.hpp"
#include "hdcate/nuisance.hpp"
#include "hdcate/score.hpp"
#include "hdcate/local_regression.hpp"
#include "hdcate/estimator.hpp"
#include "hdcate/inference.hpp"
#include "hdcate/dgp.hpp"
#include "hdcate/mc_harness.hpp"
#include "hdcate/estimate_io.hpp"
