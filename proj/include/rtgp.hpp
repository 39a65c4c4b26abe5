#pragma once

// Umbrella header for the relaxed-thresholded Gaussian process library.

#include "rtgp/errors.hpp"
#include "rtgp/rng.hpp"
#include "rtgp/distributions.hpp"
#include "rtgp/geometry.hpp"
#include "rtgp/eigensolver.hpp"
#include "rtgp/kernel_basis.hpp"
#include "rtgp/threshold.hpp"
#include "rtgp/model.hpp"
#include "rtgp/initialize.hpp"
#include "rtgp/gibbs.hpp"
#include "rtgp/cavi.hpp"
#include "rtgp/simulate.hpp"
#include "rtgp/metrics.hpp"
#include "rtgp/io.hpp"
