#pragma once

#include "gril/numerics/adam.hpp"
#include "gril/numerics/checkpoint.hpp"
#include "gril/numerics/grad_check.hpp"
#include "gril/numerics/ops.hpp"
#include "gril/numerics/tape.hpp"
#include "gril/numerics/tensor.hpp"
