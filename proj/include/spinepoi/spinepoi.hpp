// Copyright The spinepoi Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "spinepoi/anatomy.hpp"
#include "spinepoi/errors.hpp"
#include "spinepoi/evaluation.hpp"
#include "spinepoi/geometry.hpp"
#include "spinepoi/grid.hpp"
#include "spinepoi/io/config.hpp"
#include "spinepoi/io/nifti.hpp"
#include "spinepoi/io/poi_json.hpp"
#include "spinepoi/io/slicer.hpp"
#include "spinepoi/label_dictionary.hpp"
#include "spinepoi/orientation.hpp"
#include "spinepoi/phantom.hpp"
#include "spinepoi/poi.hpp"
