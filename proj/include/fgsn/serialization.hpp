// Copyright (c) 2026 The fgsn authors
// SPDX-License-Identifier: Apache-2.0
//
// Persistence: JSON for structured records, FGSN1 for dense rasters.
//
// FGSN1 layout: magic "FGSN1", then three little-endian uint32 fields
// (height, width, dim-or-classes), then the payload as little-endian
// 32-bit floats (FeatureMap/ScoreMap) or 32-bit unsigned labels (LabelMap).

#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fgsn/types.hpp"

namespace fgsn {

using json = nlohmann::json;

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ParseError("cannot open file for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ParseError("write failed: " + path.string());
}

constexpr char kRasterMagic[5] = {'F', 'G', 'S', 'N', '1'};

// Shared raster header + payload check. Returns pointer to payload start.
inline const unsigned char* check_raster(const std::string& bytes,
                                         const std::string& what,
                                         std::uint32_t* h, std::uint32_t* w,
                                         std::uint32_t* third) {
  if (bytes.size() < 5 + 12)
    throw ParseError(what + ": truncated header");
  if (std::memcmp(bytes.data(), kRasterMagic, 5) != 0)
    throw ParseError(what + ": bad magic (expected FGSN1)");
  const unsigned char* p =
      reinterpret_cast<const unsigned char*>(bytes.data()) + 5;
  *h = get_u32le(p);
  *w = get_u32le(p + 4);
  *third = get_u32le(p + 8);
  return p + 12;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// FGSN1 rasters

inline std::string encode_raster(const FeatureMap& map) {
  map.validate();
  std::string out(detail::kRasterMagic, 5);
  detail::put_u32le(out, static_cast<std::uint32_t>(map.height));
  detail::put_u32le(out, static_cast<std::uint32_t>(map.width));
  detail::put_u32le(out, static_cast<std::uint32_t>(map.dim));
  for (float v : map.data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32le(out, bits);
  }
  return out;
}

inline std::string encode_raster(const ScoreMap& map) {
  map.validate();
  std::string out(detail::kRasterMagic, 5);
  detail::put_u32le(out, static_cast<std::uint32_t>(map.height));
  detail::put_u32le(out, static_cast<std::uint32_t>(map.width));
  detail::put_u32le(out, static_cast<std::uint32_t>(map.num_classes));
  for (float v : map.scores) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32le(out, bits);
  }
  return out;
}

inline std::string encode_raster(const LabelMap& map) {
  map.validate();
  std::string out(detail::kRasterMagic, 5);
  detail::put_u32le(out, static_cast<std::uint32_t>(map.height));
  detail::put_u32le(out, static_cast<std::uint32_t>(map.width));
  detail::put_u32le(out, map.num_classes);
  for (std::uint32_t l : map.labels) detail::put_u32le(out, l);
  return out;
}

inline FeatureMap decode_feature_map(const std::string& bytes) {
  std::uint32_t h, w, d;
  const unsigned char* p = detail::check_raster(bytes, "FeatureMap", &h, &w, &d);
  if (h == 0 || w == 0 || d == 0)
    throw ParseError("FeatureMap: zero dimension in header");
  std::size_t count = std::size_t(h) * w * d;
  if (bytes.size() != 5 + 12 + count * 4)
    throw ParseError("FeatureMap: payload length mismatch");
  FeatureMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(d));
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = detail::get_u32le(p + i * 4);
    std::memcpy(&map.data[i], &bits, 4);
  }
  try {
    map.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("FeatureMap: ") + e.what());
  }
  return map;
}

inline ScoreMap decode_score_map(const std::string& bytes) {
  std::uint32_t h, w, k;
  const unsigned char* p = detail::check_raster(bytes, "ScoreMap", &h, &w, &k);
  if (h == 0 || w == 0 || k == 0)
    throw ParseError("ScoreMap: zero dimension in header");
  std::size_t count = std::size_t(h) * w * k;
  if (bytes.size() != 5 + 12 + count * 4)
    throw ParseError("ScoreMap: payload length mismatch");
  ScoreMap map(static_cast<int>(h), static_cast<int>(w), static_cast<int>(k));
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = detail::get_u32le(p + i * 4);
    std::memcpy(&map.scores[i], &bits, 4);
  }
  try {
    map.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("ScoreMap: ") + e.what());
  }
  return map;
}

inline LabelMap decode_label_map(const std::string& bytes) {
  std::uint32_t h, w, k;
  const unsigned char* p = detail::check_raster(bytes, "LabelMap", &h, &w, &k);
  if (h == 0 || w == 0 || k == 0)
    throw ParseError("LabelMap: zero dimension in header");
  std::size_t count = std::size_t(h) * w;
  if (bytes.size() != 5 + 12 + count * 4)
    throw ParseError("LabelMap: payload length mismatch");
  LabelMap map(static_cast<int>(h), static_cast<int>(w), k);
  for (std::size_t i = 0; i < count; ++i)
    map.labels[i] = detail::get_u32le(p + i * 4);
  try {
    map.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("LabelMap: ") + e.what());
  }
  return map;
}

template <typename Raster>
void save_raster(const std::filesystem::path& path, const Raster& map) {
  detail::write_file_bytes(path, encode_raster(map));
}

inline FeatureMap load_feature_map(const std::filesystem::path& path) {
  return decode_feature_map(detail::read_file_bytes(path));
}
inline ScoreMap load_score_map(const std::filesystem::path& path) {
  return decode_score_map(detail::read_file_bytes(path));
}
inline LabelMap load_label_map(const std::filesystem::path& path) {
  return decode_label_map(detail::read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// JSON records

inline void to_json(json& j, const PixelCoord& p) {
  j = json{{"row", p.row}, {"col", p.col}};
}
inline void from_json(const json& j, PixelCoord& p) {
  j.at("row").get_to(p.row);
  j.at("col").get_to(p.col);
}

inline void to_json(json& j, const PinholeCamera& c) {
  j = json{{"fx", c.fx},       {"fy", c.fy},          {"cx", c.cx},
           {"cy", c.cy},       {"width", c.width},    {"height", c.height}};
}
inline void from_json(const json& j, PinholeCamera& c) {
  j.at("fx").get_to(c.fx);
  j.at("fy").get_to(c.fy);
  j.at("cx").get_to(c.cx);
  j.at("cy").get_to(c.cy);
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
}

inline void to_json(json& j, const Pose& p) {
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[i * 3 + k] = p.rotation(i, k);
  j = json{{"rotation", r},
           {"translation",
            {p.translation.x(), p.translation.y(), p.translation.z()}}};
}
inline void from_json(const json& j, Pose& p) {
  auto r = j.at("rotation").get<std::vector<double>>();
  if (r.size() != 9) throw ParseError("Pose: rotation must have 9 entries");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) p.rotation(i, k) = r[i * 3 + k];
  auto t = j.at("translation").get<std::vector<double>>();
  if (t.size() != 3) throw ParseError("Pose: translation must have 3 entries");
  p.translation = Vec3(t[0], t[1], t[2]);
}

inline void to_json(json& j, const CorrespondenceSample& s) {
  j = json{{"ref_image_id", s.ref_image_id},
           {"tgt_image_id", s.tgt_image_id},
           {"ref_points", s.ref_points},
           {"tgt_points", s.tgt_points}};
}
inline void from_json(const json& j, CorrespondenceSample& s) {
  j.at("ref_image_id").get_to(s.ref_image_id);
  j.at("tgt_image_id").get_to(s.tgt_image_id);
  j.at("ref_points").get_to(s.ref_points);
  j.at("tgt_points").get_to(s.tgt_points);
}

inline void to_json(json& j, const LabeledPointCloud& cloud) {
  json pts = json::array();
  bool any_desc = false;
  for (const CloudPoint& p : cloud.points)
    if (!p.descriptor.empty()) any_desc = true;
  for (const CloudPoint& p : cloud.points) {
    json e = {{"p", {p.position.x(), p.position.y(), p.position.z()}},
              {"label", p.label}};
    if (any_desc) e["descriptor"] = p.descriptor;
    pts.push_back(std::move(e));
  }
  j = json{{"num_classes", cloud.num_classes}, {"points", std::move(pts)}};
}
inline void from_json(const json& j, LabeledPointCloud& cloud) {
  j.at("num_classes").get_to(cloud.num_classes);
  cloud.points.clear();
  for (const json& e : j.at("points")) {
    CloudPoint p;
    auto pos = e.at("p").get<std::vector<double>>();
    if (pos.size() != 3)
      throw ParseError("LabeledPointCloud: point must have 3 coordinates");
    p.position = Vec3(pos[0], pos[1], pos[2]);
    e.at("label").get_to(p.label);
    if (e.contains("descriptor"))
      e.at("descriptor").get_to(p.descriptor);
    cloud.points.push_back(std::move(p));
  }
}

/// Loads a JSON document, mapping all decode failures to ParseError with the
/// offending field named in the message.
inline json load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void save_json(const std::filesystem::path& path, const json& j,
                      int indent = 2) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ParseError("cannot open file for writing: " + path.string());
  out << j.dump(indent) << "\n";
  if (!out) throw ParseError("write failed: " + path.string());
}

/// Typed JSON load; nlohmann's messages carry the missing/ill-typed key.
template <typename T>
T load_json_as(const std::filesystem::path& path) {
  json j = load_json(path);
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace fgsn
