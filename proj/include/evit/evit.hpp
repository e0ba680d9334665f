#pragma once

#include "evit/accounting.hpp"
#include "evit/autograd.hpp"
#include "evit/backbone.hpp"
#include "evit/backbone_config.hpp"
#include "evit/detect_eval.hpp"
#include "evit/diagnostics.hpp"
#include "evit/errors.hpp"
#include "evit/grad_check.hpp"
#include "evit/gtsdb.hpp"
#include "evit/kernels.hpp"
#include "evit/ops.hpp"
#include "evit/param_store.hpp"
#include "evit/serialize.hpp"
#include "evit/tensor.hpp"
#include "evit/toy.hpp"
#include "evit/vit.hpp"
