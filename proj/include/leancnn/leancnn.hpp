#pragma once

#include "leancnn/adam.hpp"
#include "leancnn/arch.hpp"
#include "leancnn/cost.hpp"
#include "leancnn/data.hpp"
#include "leancnn/dsl.hpp"
#include "leancnn/engine.hpp"
#include "leancnn/error.hpp"
#include "leancnn/gradcheck.hpp"
#include "leancnn/image.hpp"
#include "leancnn/kernels.hpp"
#include "leancnn/loss.hpp"
#include "leancnn/metrics.hpp"
#include "leancnn/params.hpp"
#include "leancnn/rng.hpp"
#include "leancnn/svg.hpp"
#include "leancnn/tensor.hpp"
#include "leancnn/train.hpp"
#include "leancnn/weights_io.hpp"
