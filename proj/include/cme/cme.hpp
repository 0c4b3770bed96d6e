#pragma once

// Conditional marginal effect estimation: data model, estimator ladder
// (linear interaction, binning, local-linear kernel, AIPW, PDS-LASSO,
// DML-PLM), simulation laboratory and Monte Carlo benchmark harness.

#include "cme/bands.hpp"
#include "cme/basis.hpp"
#include "cme/boosted_trees.hpp"
#include "cme/common.hpp"
#include "cme/curve.hpp"
#include "cme/dataset.hpp"
#include "cme/debiased.hpp"
#include "cme/dgp.hpp"
#include "cme/estimate.hpp"
#include "cme/kernel.hpp"
#include "cme/lasso.hpp"
#include "cme/linear_binning.hpp"
#include "cme/logistic.hpp"
#include "cme/mc.hpp"
#include "cme/parallel.hpp"
#include "cme/rng.hpp"
#include "cme/wls.hpp"
