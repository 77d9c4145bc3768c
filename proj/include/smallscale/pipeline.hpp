#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "smallscale/coco.hpp"
#include "smallscale/detector.hpp"
#include "smallscale/parallel.hpp"
#include "smallscale/raster.hpp"

namespace smallscale {

struct UpTestConfig {
  double alpha = 2.0;
  double small_gate_max = 1024.0;  // pass-2 keeps rescaled area below this (x margin)
  double large_gate_min = 1024.0;  // pass-1 keeps area above this (/ margin)
  double gate_margin = 1.25;       // soft overlap band; NMS resolves duplicates in it
  double nms_iou = 0.5;
  double score_floor = 0.05;

  void validate() const {
    if (!(alpha > 1.0)) throw std::invalid_argument("UpTestConfig: alpha must be > 1");
    if (!(nms_iou > 0.0 && nms_iou < 1.0)) {
      throw std::invalid_argument("UpTestConfig: nms_iou must be in (0,1)");
    }
    if (!(gate_margin >= 1.0)) throw std::invalid_argument("UpTestConfig: gate_margin must be >= 1");
    if (score_floor < 0.0 || score_floor > 1.0) {
      throw std::invalid_argument("UpTestConfig: score_floor must be in [0,1]");
    }
  }
};

inline std::string scale_tag_for(double factor) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "x%.2f", factor);
  return buf;
}

namespace detail {

inline void require_scored(const std::vector<Detection>& dets, std::int64_t image_id) {
  for (const auto& d : dets) {
    if (!d.score) {
      throw MissingScoreError("detector returned unscored detection for image " +
                              std::to_string(image_id));
    }
    if (*d.score < 0.0 || *d.score > 1.0) {
      throw Error("detector returned score outside [0,1] for image " + std::to_string(image_id));
    }
  }
}

}  // namespace detail

/// Greedy per-category suppression: boxes in descending score order (ties by
/// input order); a box survives iff its IoU with every kept box of the same
/// category is <= threshold. All detections must belong to one image.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0)) {
    throw std::invalid_argument("nms: iou_threshold must be in (0,1)");
  }
  for (const auto& d : dets) {
    if (!d.score) throw std::invalid_argument("nms: detections must be scored");
    if (d.image_id != dets.front().image_id) {
      throw std::invalid_argument("nms: detections must share one image");
    }
  }

  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return *dets[a].score > *dets[b].score; });

  std::vector<Detection> kept;
  for (std::size_t idx : order) {
    const Detection& cand = dets[idx];
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.category_id == cand.category_id && iou(k.bbox, cand.bbox) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(cand);
  }
  return kept;
}

/// Native-resolution inference over the whole dataset. Detections scoring
/// below score_floor are dropped; adapter errors carry the image id.
inline DetectionSet run_single_pass(const Detector& det, const AnnotatedDataset& images,
                                    const std::filesystem::path& images_root,
                                    double score_floor = 0.05, int jobs = 0) {
  std::vector<std::vector<Detection>> per_image(images.images.size());
  parallel_for(images.images.size(), jobs, [&](std::size_t i) {
    const ImageRecord& rec = images.images[i];
    DetectRequest req;
    req.image_id = rec.id;
    req.path = images_root / rec.file_name;
    req.scale_tag = scale_tag_for(1.0);
    try {
      auto dets = det.detect(req);
      detail::require_scored(dets, rec.id);
      for (auto& d : dets) {
        if (*d.score >= score_floor) per_image[i].push_back(std::move(d));
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("image " + std::to_string(rec.id) + ": " + e.what());
    }
  });

  DetectionSet out;
  for (auto& dets : per_image) {
    for (auto& d : dets) out.detections.push_back(std::move(d));
  }
  return out;
}

/// Two-pass inference: pass 1 on the native image keeps boxes in the
/// medium/large regime, pass 2 on the x-alpha image keeps boxes whose
/// 1/alpha-rescaled area stays in the small regime, then per-category NMS
/// merges the union. Output boxes are clipped to native bounds and carry
/// pass provenance.
inline DetectionSet run_up_test(const Detector& det, const AnnotatedDataset& images,
                                const std::filesystem::path& images_root,
                                const UpTestConfig& cfg = {}, int jobs = 0) {
  cfg.validate();
  std::vector<std::vector<Detection>> per_image(images.images.size());
  parallel_for(images.images.size(), jobs, [&](std::size_t i) {
    const ImageRecord& rec = images.images[i];
    const std::filesystem::path native_path = images_root / rec.file_name;
    try {
      DetectRequest pass1_req;
      pass1_req.image_id = rec.id;
      pass1_req.path = native_path;
      pass1_req.scale_tag = scale_tag_for(1.0);
      auto pass1 = det.detect(pass1_req);
      detail::require_scored(pass1, rec.id);

      DetectRequest pass2_req;
      pass2_req.image_id = rec.id;
      pass2_req.image = resize_bilinear(load_image(native_path), cfg.alpha);
      pass2_req.scale_tag = scale_tag_for(cfg.alpha);
      auto pass2 = det.detect(pass2_req);
      detail::require_scored(pass2, rec.id);

      std::vector<Detection> merged;
      for (auto& d : pass1) {
        if (*d.score < cfg.score_floor) continue;
        if (d.bbox.area() < cfg.large_gate_min / cfg.gate_margin) continue;
        auto clipped = clip_box(d.bbox, rec.width, rec.height);
        if (!clipped) continue;
        d.bbox = *clipped;
        d.pass_index = 1;
        merged.push_back(std::move(d));
      }
      for (auto& d : pass2) {
        if (*d.score < cfg.score_floor) continue;
        auto clipped = clip_box(scale_box(d.bbox, 1.0 / cfg.alpha), rec.width, rec.height);
        if (!clipped) continue;
        if (clipped->area() >= cfg.small_gate_max * cfg.gate_margin) continue;
        d.bbox = *clipped;
        d.pass_index = 2;
        merged.push_back(std::move(d));
      }
      per_image[i] = nms(merged, cfg.nms_iou);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("image " + std::to_string(rec.id) + ": " + e.what());
    }
  });

  DetectionSet out;
  for (auto& dets : per_image) {
    for (auto& d : dets) out.detections.push_back(std::move(d));
  }
  return out;
}

/// Teacher run for distillation: Up@Test over the training split, keeping
/// only pass-2 detections in the Small range (the pseudo-label candidates).
inline DetectionSet run_teacher(const Detector& det, const AnnotatedDataset& train_images,
                                const std::filesystem::path& images_root,
                                const UpTestConfig& cfg = {}, int jobs = 0) {
  DetectionSet full = run_up_test(det, train_images, images_root, cfg, jobs);
  DetectionSet out;
  for (auto& d : full.detections) {
    if (d.pass_index == 2 && d.bbox.area() < cfg.small_gate_max) {
      out.detections.push_back(std::move(d));
    }
  }
  return out;
}

}  // namespace smallscale
