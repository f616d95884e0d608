#pragma once

#include "xiqa/error.hpp"
#include "xiqa/tensor.hpp"
#include "xiqa/ops.hpp"
#include "xiqa/gradcheck.hpp"
#include "xiqa/png.hpp"
#include "xiqa/image.hpp"
#include "xiqa/degrade.hpp"
#include "xiqa/manifest.hpp"
#include "xiqa/synth.hpp"
#include "xiqa/vit.hpp"
#include "xiqa/adamw.hpp"
#include "xiqa/checkpoint.hpp"
#include "xiqa/metrics.hpp"
#include "xiqa/parallel.hpp"
#include "xiqa/train.hpp"
#include "xiqa/eval.hpp"
#include "xiqa/config.hpp"
