#pragma once

#include "axdelta/adam.hpp"
#include "axdelta/artifact.hpp"
#include "axdelta/bytes.hpp"
#include "axdelta/calibration.hpp"
#include "axdelta/container.hpp"
#include "axdelta/delta_codec.hpp"
#include "axdelta/error.hpp"
#include "axdelta/half.hpp"
#include "axdelta/matrix.hpp"
#include "axdelta/pipeline.hpp"
#include "axdelta/report.hpp"
#include "axdelta/rng.hpp"
#include "axdelta/scale_fit.hpp"
#include "axdelta/toy_model.hpp"
