#pragma once

#include "veca/analysis.hpp"
#include "veca/attention.hpp"
#include "veca/checkpoint.hpp"
#include "veca/config.hpp"
#include "veca/distill.hpp"
#include "veca/elastic.hpp"
#include "veca/errors.hpp"
#include "veca/grad_check.hpp"
#include "veca/image.hpp"
#include "veca/model.hpp"
#include "veca/ops.hpp"
#include "veca/rng.hpp"
#include "veca/rope2d.hpp"
#include "veca/tensor.hpp"
#include "veca/verify.hpp"
