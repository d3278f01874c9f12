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

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsi/error.hpp"
#include "wsi/geometry.hpp"
#include "wsi/raster.hpp"

namespace wsi {

/// Tumor outlines for one slide, as closed level-0 polygons.
struct Annotation {
  std::string slide_id;
  std::vector<Polygon> polygons;

  [[nodiscard]] bool contains(Point2 p) const noexcept {
    for (const auto& poly : polygons)
      if (point_in_polygon(poly, p)) return true;
    return false;
  }
};

[[nodiscard]] inline nlohmann::json annotation_to_json(const Annotation& a) {
  nlohmann::json j;
  j["slide_id"] = a.slide_id;
  auto& polys = j["polygons"] = nlohmann::json::array();
  for (const auto& p : a.polygons) {
    auto verts = nlohmann::json::array();
    for (const auto& v : p) verts.push_back({v.x, v.y});
    polys.push_back({{"label", "tumor"}, {"vertices", std::move(verts)}});
  }
  return j;
}

[[nodiscard]] inline Annotation annotation_from_json(const nlohmann::json& j) {
  Annotation a;
  try {
    a.slide_id = j.at("slide_id").get<std::string>();
    for (const auto& p : j.at("polygons")) {
      if (p.value("label", "tumor") != "tumor") continue;
      Polygon poly;
      for (const auto& v : p.at("vertices")) poly.push_back({v.at(0).get<double>(), v.at(1).get<double>()});
      if (poly.size() < 3) throw Error(Errc::data, "polygon with fewer than 3 vertices");
      a.polygons.push_back(std::move(poly));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format, std::string("malformed annotation: ") + e.what());
  }
  return a;
}

inline void write_annotation(const std::filesystem::path& path, const Annotation& a) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << annotation_to_json(a).dump(1) << "\n";
}

[[nodiscard]] inline Annotation read_annotation(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open annotation " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format, "unparsable annotation " + path.string() + ": " + e.what());
  }
  return annotation_from_json(j);
}

/// Pixel-center rasterization at a level with the given downsample: cell
/// (x, y) is 1 iff level-0 point ((x + 0.5) * ds, (y + 0.5) * ds) lies in a polygon.
[[nodiscard]] inline BinaryGrid rasterize_annotation(const Annotation& a, std::int64_t width,
                                                     std::int64_t height,
                                                     std::int64_t downsample = 1) {
  BinaryGrid g(width, height);
  const double ds = static_cast<double>(downsample);
  for (const auto& poly : a.polygons) {
    const auto bb = bounding_box(poly);
    const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(bb.x0 / ds) - 1);
    const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(bb.y0 / ds) - 1);
    const auto x1 = std::min<std::int64_t>(width, static_cast<std::int64_t>(bb.x1 / ds) + 2);
    const auto y1 = std::min<std::int64_t>(height, static_cast<std::int64_t>(bb.y1 / ds) + 2);
    for (auto y = y0; y < y1; ++y)
      for (auto x = x0; x < x1; ++x)
        if (point_in_polygon(poly, {(x + 0.5) * ds, (y + 0.5) * ds})) g.at(x, y) = 1;
  }
  return g;
}

}  // namespace wsi
