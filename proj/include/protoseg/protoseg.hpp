#pragma once

#include "protoseg/bench.hpp"
#include "protoseg/blocking.hpp"
#include "protoseg/config.hpp"
#include "protoseg/core.hpp"
#include "protoseg/io.hpp"
#include "protoseg/metrics.hpp"
#include "protoseg/nn.hpp"
#include "protoseg/pipeline.hpp"
#include "protoseg/rng.hpp"
#include "protoseg/sampling.hpp"
