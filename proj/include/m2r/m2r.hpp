#ifndef M2R_M2R_HPP
#define M2R_M2R_HPP

#include "m2r/calibration.hpp"
#include "m2r/checkpoint.hpp"
#include "m2r/config.hpp"
#include "m2r/dataset.hpp"
#include "m2r/errors.hpp"
#include "m2r/gaze.hpp"
#include "m2r/harness.hpp"
#include "m2r/kinematics.hpp"
#include "m2r/layers.hpp"
#include "m2r/pipeline.hpp"
#include "m2r/policy.hpp"
#include "m2r/radam.hpp"
#include "m2r/rng.hpp"
#include "m2r/tensor.hpp"

#endif  // M2R_M2R_HPP
