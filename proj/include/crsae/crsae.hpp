#pragma once

#include "crsae/adam.hpp"
#include "crsae/conv_ops.hpp"
#include "crsae/encoder.hpp"
#include "crsae/errors.hpp"
#include "crsae/eval.hpp"
#include "crsae/gradients.hpp"
#include "crsae/io.hpp"
#include "crsae/losses.hpp"
#include "crsae/parallel.hpp"
#include "crsae/rng.hpp"
#include "crsae/simulate.hpp"
#include "crsae/trainer.hpp"
#include "crsae/types.hpp"
