// Copyright 2026 The wsiscreen Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Everything except PNG output, which needs libpng (include wsi/png.hpp).

#include "wsi/annotation.hpp"
#include "wsi/classifier.hpp"
#include "wsi/csv.hpp"
#include "wsi/error.hpp"
#include "wsi/evaluation.hpp"
#include "wsi/features.hpp"
#include "wsi/forest.hpp"
#include "wsi/geometry.hpp"
#include "wsi/heatmap.hpp"
#include "wsi/parallel.hpp"
#include "wsi/pipeline.hpp"
#include "wsi/pyramid.hpp"
#include "wsi/raster.hpp"
#include "wsi/rng.hpp"
#include "wsi/roi.hpp"
#include "wsi/sampler.hpp"
#include "wsi/subprocess.hpp"
#include "wsi/synthgen.hpp"
