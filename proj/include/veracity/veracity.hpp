// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "veracity/checkpoint.hpp"
#include "veracity/corpus.hpp"
#include "veracity/error.hpp"
#include "veracity/explain.hpp"
#include "veracity/metrics.hpp"
#include "veracity/model.hpp"
#include "veracity/random.hpp"
#include "veracity/service.hpp"
#include "veracity/tensor.hpp"
#include "veracity/tokenizer.hpp"
#include "veracity/train.hpp"
