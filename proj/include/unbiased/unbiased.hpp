#pragma once

// Umbrella header.
#include "combinatorics.hpp"
#include "disk.hpp"
#include "disk_trials.hpp"
#include "error.hpp"
#include "estimators.hpp"
#include "fft.hpp"
#include "format.hpp"
#include "linalg.hpp"
#include "matrix_io.hpp"
#include "model.hpp"
#include "parallel.hpp"
#include "phantom.hpp"
#include "probability.hpp"
#include "recoverability.hpp"
#include "rng.hpp"
#include "special.hpp"
#include "whitening.hpp"

namespace unbiased {
#ifdef UNBIASED_VERSION
inline constexpr const char *version = UNBIASED_VERSION;
#else
inline constexpr const char *version = "0.1.0";
#endif
} // namespace unbiased
