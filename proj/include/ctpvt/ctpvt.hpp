#pragma once

#include "ctpvt/adamw.hpp"
#include "ctpvt/checkpoint.hpp"
#include "ctpvt/dataset.hpp"
#include "ctpvt/error.hpp"
#include "ctpvt/image.hpp"
#include "ctpvt/kernels.hpp"
#include "ctpvt/metrics.hpp"
#include "ctpvt/ops.hpp"
#include "ctpvt/preprocess.hpp"
#include "ctpvt/pvt_config.hpp"
#include "ctpvt/pvt_model.hpp"
#include "ctpvt/rng.hpp"
#include "ctpvt/run_config.hpp"
#include "ctpvt/sampling.hpp"
#include "ctpvt/synthetic.hpp"
#include "ctpvt/tensor.hpp"
#include "ctpvt/train.hpp"
