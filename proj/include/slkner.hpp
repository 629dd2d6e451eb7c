// SPDX-License-Identifier: Apache-2.0
// Umbrella header for the slkner library.
#pragma once

#include "slkner/container.hpp"
#include "slkner/corpus.hpp"
#include "slkner/crf.hpp"
#include "slkner/encoder.hpp"
#include "slkner/error.hpp"
#include "slkner/eval.hpp"
#include "slkner/fusion.hpp"
#include "slkner/lexicon.hpp"
#include "slkner/model.hpp"
#include "slkner/tensor.hpp"
#include "slkner/trainer.hpp"
#include "slkner/cli.hpp"
#include "slkner/utf8.hpp"
