#pragma once

#include "fndclip/adam.hpp"
#include "fndclip/analysis.hpp"
#include "fndclip/checkpoint.hpp"
#include "fndclip/config.hpp"
#include "fndclip/corpus.hpp"
#include "fndclip/errors.hpp"
#include "fndclip/layers.hpp"
#include "fndclip/loss.hpp"
#include "fndclip/metrics.hpp"
#include "fndclip/model.hpp"
#include "fndclip/rng.hpp"
#include "fndclip/synthetic.hpp"
#include "fndclip/tensor.hpp"
#include "fndclip/trainer.hpp"
