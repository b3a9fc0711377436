#pragma once

#include "stocktime/tensor.hpp"
#include "stocktime/rng.hpp"
#include "stocktime/timestamp.hpp"
#include "stocktime/diagnostics.hpp"
#include "stocktime/data.hpp"
#include "stocktime/patcher.hpp"
#include "stocktime/nn.hpp"
#include "stocktime/backbone.hpp"
#include "stocktime/context.hpp"
#include "stocktime/checkpoint.hpp"
#include "stocktime/model.hpp"
#include "stocktime/optim.hpp"
#include "stocktime/metrics.hpp"
#include "stocktime/train.hpp"
#include "stocktime/baselines.hpp"
#include "stocktime/config.hpp"
#include "stocktime/experiments.hpp"
