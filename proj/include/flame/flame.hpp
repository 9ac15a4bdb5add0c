#pragma once

#include "flame/benchmark.hpp"
#include "flame/common.hpp"
#include "flame/data.hpp"
#include "flame/diagnostics.hpp"
#include "flame/fit.hpp"
#include "flame/inference.hpp"
#include "flame/io.hpp"
#include "flame/model.hpp"
#include "flame/rng.hpp"
#include "flame/sampler.hpp"
#include "flame/sim.hpp"
#include "flame/splines.hpp"
