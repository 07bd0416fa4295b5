// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "fgsn/clustering.hpp"
#include "fgsn/evaluation.hpp"
#include "fgsn/geometry.hpp"
#include "fgsn/inference.hpp"
#include "fgsn/localization.hpp"
#include "fgsn/parallel.hpp"
#include "fgsn/random.hpp"
#include "fgsn/serialization.hpp"
#include "fgsn/simulation.hpp"
#include "fgsn/synthdata.hpp"
#include "fgsn/training.hpp"
#include "fgsn/types.hpp"
