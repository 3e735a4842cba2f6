#pragma once

#include "chain_dp.hpp"
#include "errors.hpp"
#include "harness.hpp"
#include "io.hpp"
#include "moments.hpp"
#include "network.hpp"
#include "ntk.hpp"
#include "path_oracle.hpp"
#include "rng.hpp"
#include "theory.hpp"
