#pragma once

#include <scma/baselines.hpp>
#include <scma/bslm.hpp>
#include <scma/channel.hpp>
#include <scma/convex_kernel.hpp>
#include <scma/harness.hpp>
#include <scma/rng.hpp>
#include <scma/system_model.hpp>
