// dpaat.hpp - umbrella header.

#pragma once

#include "attacks.hpp"
#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "core.hpp"
#include "data.hpp"
#include "config.hpp"
#include "gradcam.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "trainers.hpp"
