// Copyright 2026 The EDM Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "edm/checkpoint.hpp"
#include "edm/chem.hpp"
#include "edm/config.hpp"
#include "edm/dataio.hpp"
#include "edm/diffusion.hpp"
#include "edm/distributions.hpp"
#include "edm/egnn.hpp"
#include "edm/errors.hpp"
#include "edm/geometry.hpp"
#include "edm/matrix.hpp"
#include "edm/molecule.hpp"
#include "edm/normal.hpp"
#include "edm/params.hpp"
#include "edm/pipeline.hpp"
#include "edm/schedule.hpp"
#include "edm/tensor.hpp"
#include "edm/train.hpp"
