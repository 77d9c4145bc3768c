#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "smallscale/errors.hpp"
#include "smallscale/geometry.hpp"

namespace smallscale {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

struct ImageRecord {
  std::int64_t id = 0;
  int width = 0;
  int height = 0;
  std::string file_name;
};

struct Annotation {
  std::int64_t id = 0;
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BBox bbox;
  double area = 0.0;  // from the file when present, else bbox w*h
  bool iscrowd = false;
};

struct Category {
  std::int64_t id = 0;
  std::string name;
};

/// A predicted box. Score is absent only in fixed-set evaluation mode.
/// pass_index records two-pass provenance (1 = native, 2 = upscaled).
struct Detection {
  std::int64_t image_id = 0;
  std::int64_t category_id = 0;
  BBox bbox;
  std::optional<double> score;
  std::optional<int> pass_index;
};

struct AnnotatedDataset {
  std::vector<ImageRecord> images;
  std::vector<Annotation> annotations;
  std::vector<Category> categories;

  const ImageRecord* find_image(std::int64_t image_id) const {
    for (const auto& im : images) {
      if (im.id == image_id) return &im;
    }
    return nullptr;
  }

  std::unordered_map<std::int64_t, const ImageRecord*> image_index() const {
    std::unordered_map<std::int64_t, const ImageRecord*> idx;
    idx.reserve(images.size());
    for (const auto& im : images) idx.emplace(im.id, &im);
    return idx;
  }

  std::unordered_map<std::int64_t, std::vector<const Annotation*>> annotations_by_image() const {
    std::unordered_map<std::int64_t, std::vector<const Annotation*>> idx;
    for (const auto& im : images) idx[im.id];
    for (const auto& a : annotations) idx[a.image_id].push_back(&a);
    return idx;
  }

  std::int64_t max_image_id() const {
    std::int64_t m = 0;
    for (const auto& im : images) m = std::max(m, im.id);
    return m;
  }

  std::int64_t max_annotation_id() const {
    std::int64_t m = 0;
    for (const auto& a : annotations) m = std::max(m, a.id);
    return m;
  }

  // Checks id uniqueness, referential integrity, positive areas and the
  // 0.5 px bbox-inside-image tolerance. Throws IntegrityError.
  void validate() const {
    std::unordered_map<std::int64_t, const ImageRecord*> images_by_id;
    for (const auto& im : images) {
      if (!images_by_id.emplace(im.id, &im).second) {
        throw IntegrityError("duplicate image id " + std::to_string(im.id), {im.id});
      }
      if (im.width <= 0 || im.height <= 0) {
        throw IntegrityError("image " + std::to_string(im.id) + " has non-positive dimensions",
                             {im.id});
      }
    }
    std::unordered_set<std::int64_t> category_ids;
    for (const auto& c : categories) {
      if (!category_ids.insert(c.id).second) {
        throw IntegrityError("duplicate category id " + std::to_string(c.id), {c.id});
      }
    }

    std::unordered_set<std::int64_t> ann_ids;
    std::vector<std::int64_t> dangling;
    for (const auto& a : annotations) {
      if (!ann_ids.insert(a.id).second) {
        throw IntegrityError("duplicate annotation id " + std::to_string(a.id), {a.id});
      }
      auto it = images_by_id.find(a.image_id);
      if (it == images_by_id.end() || category_ids.find(a.category_id) == category_ids.end()) {
        dangling.push_back(a.id);
        continue;
      }
      if (!(a.area > 0.0)) {
        throw IntegrityError("annotation " + std::to_string(a.id) + " has non-positive area",
                             {a.id});
      }
      const ImageRecord& im = *it->second;
      constexpr double kTol = 0.5;
      if (a.bbox.x < -kTol || a.bbox.y < -kTol || a.bbox.x2() > im.width + kTol ||
          a.bbox.y2() > im.height + kTol) {
        throw IntegrityError("annotation " + std::to_string(a.id) + " exceeds image bounds",
                             {a.id});
      }
    }
    if (!dangling.empty()) {
      std::ostringstream msg;
      msg << "annotations with unresolved image_id/category_id:";
      for (auto id : dangling) msg << ' ' << id;
      throw IntegrityError(msg.str(), dangling);
    }
  }
};

struct DetectionSet {
  std::vector<Detection> detections;

  std::unordered_map<std::int64_t, std::vector<const Detection*>> by_image() const {
    std::unordered_map<std::int64_t, std::vector<const Detection*>> idx;
    for (const auto& d : detections) idx[d.image_id].push_back(&d);
    return idx;
  }

  bool all_scored() const {
    for (const auto& d : detections) {
      if (!d.score) return false;
    }
    return true;
  }

  /// Every detection's image_id must resolve in the companion dataset.
  void validate_against(const AnnotatedDataset& dataset) const {
    auto images = dataset.image_index();
    std::vector<std::int64_t> unknown;
    for (const auto& d : detections) {
      if (images.find(d.image_id) == images.end()) unknown.push_back(d.image_id);
    }
    if (!unknown.empty()) {
      std::ostringstream msg;
      msg << "detections reference unknown image ids:";
      for (auto id : unknown) msg << ' ' << id;
      throw IntegrityError(msg.str(), unknown);
    }
  }
};

namespace detail {

inline json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what() + " (byte " + std::to_string(e.byte) + ")");
  }
}

inline BBox bbox_from_json(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 4) {
    throw ParseError(context + ": bbox must be a 4-element [x,y,w,h] array");
  }
  double x = j[0].get<double>();
  double y = j[1].get<double>();
  double w = j[2].get<double>();
  double h = j[3].get<double>();
  if (!(w > 0.0) || !(h > 0.0)) {
    throw ParseError(context + ": degenerate bbox (w=" + std::to_string(w) +
                     ", h=" + std::to_string(h) + ")");
  }
  return BBox(x, y, w, h);
}

inline ordered_json bbox_to_json(const BBox& b) {
  return ordered_json::array({b.x, b.y, b.w, b.h});
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace detail

inline AnnotatedDataset load_dataset(const std::filesystem::path& path) {
  json root = detail::parse_json_file(path);
  if (!root.is_object() || !root.contains("images") || !root.contains("annotations") ||
      !root.contains("categories")) {
    throw ParseError(path.string() + ": expected images/annotations/categories arrays");
  }

  AnnotatedDataset d;
  for (const auto& j : root["images"]) {
    ImageRecord im;
    im.id = j.at("id").get<std::int64_t>();
    im.width = j.at("width").get<int>();
    im.height = j.at("height").get<int>();
    im.file_name = j.value("file_name", std::string{});
    d.images.push_back(std::move(im));
  }
  for (const auto& j : root["annotations"]) {
    std::int64_t id = j.at("id").get<std::int64_t>();
    BBox box = detail::bbox_from_json(j.at("bbox"), "annotation " + std::to_string(id));
    Annotation a{id,
                 j.at("image_id").get<std::int64_t>(),
                 j.at("category_id").get<std::int64_t>(),
                 box,
                 j.contains("area") ? j["area"].get<double>() : box.area(),
                 false};
    if (j.contains("iscrowd")) {
      const auto& c = j["iscrowd"];
      a.iscrowd = c.is_boolean() ? c.get<bool>() : (c.get<std::int64_t>() != 0);
    }
    // segmentation and any other unknown keys are intentionally dropped
    d.annotations.push_back(std::move(a));
  }
  for (const auto& j : root["categories"]) {
    d.categories.push_back({j.at("id").get<std::int64_t>(), j.value("name", std::string{})});
  }

  d.validate();
  return d;
}

inline ordered_json dataset_to_json(const AnnotatedDataset& d) {
  ordered_json root;
  root["images"] = ordered_json::array();
  for (const auto& im : d.images) {
    root["images"].push_back({{"id", im.id},
                              {"width", im.width},
                              {"height", im.height},
                              {"file_name", im.file_name}});
  }
  root["annotations"] = ordered_json::array();
  for (const auto& a : d.annotations) {
    root["annotations"].push_back({{"id", a.id},
                                   {"image_id", a.image_id},
                                   {"category_id", a.category_id},
                                   {"bbox", detail::bbox_to_json(a.bbox)},
                                   {"area", a.area},
                                   {"iscrowd", a.iscrowd ? 1 : 0}});
  }
  root["categories"] = ordered_json::array();
  for (const auto& c : d.categories) {
    root["categories"].push_back({{"id", c.id}, {"name", c.name}});
  }
  return root;
}

inline void save_dataset(const AnnotatedDataset& d, const std::filesystem::path& path) {
  d.validate();
  detail::write_text_file(path, dataset_to_json(d).dump(1) + "\n");
}

inline DetectionSet load_detections(const std::filesystem::path& path) {
  json root = detail::parse_json_file(path);
  if (!root.is_array()) {
    throw ParseError(path.string() + ": expected a results array");
  }
  DetectionSet set;
  set.detections.reserve(root.size());
  for (const auto& j : root) {
    Detection det{j.at("image_id").get<std::int64_t>(),
                  j.at("category_id").get<std::int64_t>(),
                  detail::bbox_from_json(j.at("bbox"), "detection"),
                  std::nullopt,
                  std::nullopt};
    if (j.contains("score") && !j["score"].is_null()) {
      double s = j["score"].get<double>();
      if (s < 0.0 || s > 1.0) {
        throw ParseError(path.string() + ": score " + std::to_string(s) + " outside [0,1]");
      }
      det.score = s;
    }
    if (j.contains("pass") && !j["pass"].is_null()) det.pass_index = j["pass"].get<int>();
    set.detections.push_back(std::move(det));
  }
  return set;
}

inline ordered_json detections_to_json(const DetectionSet& set) {
  ordered_json root = ordered_json::array();
  for (const auto& d : set.detections) {
    ordered_json j{{"image_id", d.image_id},
                   {"category_id", d.category_id},
                   {"bbox", detail::bbox_to_json(d.bbox)}};
    if (d.score) j["score"] = *d.score;
    if (d.pass_index) j["pass"] = *d.pass_index;
    root.push_back(std::move(j));
  }
  return root;
}

inline void save_detections(const DetectionSet& set, const std::filesystem::path& path) {
  detail::write_text_file(path, detections_to_json(set).dump(1) + "\n");
}

/// Per-(category, size class) counts. iscrowd annotations are tallied
/// separately, never inside the size columns.
struct SizeHistogram {
  std::map<std::int64_t, std::array<std::int64_t, 3>> per_category;
  std::array<std::int64_t, 3> totals{0, 0, 0};
  std::int64_t iscrowd_count = 0;

  std::int64_t total() const { return totals[0] + totals[1] + totals[2]; }
  double small_fraction() const {
    const std::int64_t n = total();
    return n == 0 ? 0.0 : static_cast<double>(totals[0]) / static_cast<double>(n);
  }
};

inline SizeHistogram size_histogram(const AnnotatedDataset& d, const SizeThresholds& t = {}) {
  SizeHistogram h;
  for (const auto& c : d.categories) h.per_category[c.id] = {0, 0, 0};
  for (const auto& a : d.annotations) {
    if (a.iscrowd) {
      ++h.iscrowd_count;
      continue;
    }
    const auto cls = static_cast<std::size_t>(classify_size(a.area, t));
    ++h.per_category[a.category_id][cls];
    ++h.totals[cls];
  }
  return h;
}

}  // namespace smallscale
