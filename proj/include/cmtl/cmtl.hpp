#pragma once

#include "cmtl/config.hpp"
#include "cmtl/data.hpp"
#include "cmtl/dataset.hpp"
#include "cmtl/error.hpp"
#include "cmtl/harness.hpp"
#include "cmtl/losses.hpp"
#include "cmtl/metrics.hpp"
#include "cmtl/model.hpp"
#include "cmtl/numerics.hpp"
#include "cmtl/optimizer.hpp"
#include "cmtl/relatedness.hpp"
#include "cmtl/text.hpp"
