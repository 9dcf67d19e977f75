#pragma once

#include "mind/autodiff.hpp"
#include "mind/backbone.hpp"
#include "mind/checkpoint.hpp"
#include "mind/common.hpp"
#include "mind/degrade.hpp"
#include "mind/evalkit.hpp"
#include "mind/gradcheck.hpp"
#include "mind/image.hpp"
#include "mind/image_io.hpp"
#include "mind/naab.hpp"
#include "mind/nle.hpp"
#include "mind/objective.hpp"
#include "mind/rng.hpp"
#include "mind/synthdata.hpp"
#include "mind/tensor.hpp"
#include "mind/trainer.hpp"
