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

#include <stdexcept>
#include <string>
#include <string_view>

namespace wsi {

enum class Errc {
  format,
  corrupt_slide,
  bounds,
  io,
  empty_histogram,
  empty_tissue,
  config,
  shape,
  adapter,
  alignment,
  duplicate_patch,
  empty_heatmap,
  schema,
  data,
  gen,
  stage,
};

[[nodiscard]] constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::format:          return "FormatError";
    case Errc::corrupt_slide:   return "CorruptSlide";
    case Errc::bounds:          return "BoundsError";
    case Errc::io:              return "IoError";
    case Errc::empty_histogram: return "EmptyHistogram";
    case Errc::empty_tissue:    return "EmptyTissue";
    case Errc::config:          return "ConfigError";
    case Errc::shape:           return "ShapeError";
    case Errc::adapter:         return "AdapterError";
    case Errc::alignment:       return "AlignmentError";
    case Errc::duplicate_patch: return "DuplicatePatch";
    case Errc::empty_heatmap:   return "EmptyHeatmap";
    case Errc::schema:          return "SchemaError";
    case Errc::data:            return "DataError";
    case Errc::gen:             return "GenError";
    case Errc::stage:           return "StageError";
  }
  return "Error";
}

/// Every failure raised by the library carries one of the Errc kinds so
/// callers (and the CLI exit-code mapping) can dispatch on it.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  [[nodiscard]] Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

/// Process exit code for a failure kind: 2 config, 3 data, 4 stage failure.
[[nodiscard]] constexpr int exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::config:
    case Errc::schema:
    case Errc::shape:
      return 2;
    case Errc::format:
    case Errc::corrupt_slide:
    case Errc::bounds:
    case Errc::empty_histogram:
    case Errc::empty_tissue:
    case Errc::alignment:
    case Errc::duplicate_patch:
    case Errc::empty_heatmap:
    case Errc::data:
      return 3;
    default:
      return 4;
  }
}

}  // namespace wsi
