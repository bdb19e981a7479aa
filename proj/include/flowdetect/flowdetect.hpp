// SPDX-FileCopyrightText: (c) 2026 The flowdetect Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "flowdetect/checkpoint.hpp"
#include "flowdetect/csv.hpp"
#include "flowdetect/error.hpp"
#include "flowdetect/flow_ingest.hpp"
#include "flowdetect/mix_builder.hpp"
#include "flowdetect/nss_tokenizer.hpp"
#include "flowdetect/perturb.hpp"
#include "flowdetect/rng.hpp"
#include "flowdetect/subword.hpp"
#include "flowdetect/synthetic.hpp"
#include "flowdetect/tensor.hpp"
#include "flowdetect/tiny_encoder.hpp"
#include "flowdetect/train_eval.hpp"
