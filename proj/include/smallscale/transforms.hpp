#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "smallscale/coco.hpp"
#include "smallscale/parallel.hpp"
#include "smallscale/raster.hpp"
#include "smallscale/rng.hpp"

namespace smallscale {

/// Fraction of synthetic images in the mixed training set.
struct MixRatio {
  double synthetic_fraction = 0.414;

  MixRatio() = default;
  explicit MixRatio(double f) : synthetic_fraction(f) {
    if (!(f > 0.0 && f < 1.0)) {
      throw std::invalid_argument("MixRatio: fraction must be in (0,1)");
    }
  }

  /// Synthetic copy count making synthetic : original approximate f : (1-f).
  std::int64_t synthetic_count(std::int64_t originals) const {
    return std::llround(originals * synthetic_fraction / (1.0 - synthetic_fraction));
  }
};

struct DownTrainConfig {
  double beta = 1.0 / 3.0;
  MixRatio mix{};
  std::uint64_t seed = 0;

  void validate() const {
    if (!(beta > 0.0 && beta < 1.0)) {
      throw std::invalid_argument("DownTrainConfig: beta must be in (0,1)");
    }
  }
};

struct AugmentConfig {
  enum class Mode { Blur, ScaleRescale };
  Mode mode = Mode::Blur;
  GaussianSpec blur{7, 1.4};
  double gamma = 3.0;
  MixRatio mix{};
  std::uint64_t seed = 0;

  void validate() const {
    if (mode == Mode::ScaleRescale && !(gamma > 1.0)) {
      throw std::invalid_argument("AugmentConfig: gamma must be > 1");
    }
  }
};

struct DistillConfig {
  double confidence_threshold = 0.5;
  SizeThresholds size_thresholds{};
  bool include_downscaled = true;
  double down_beta = 1.0 / 3.0;

  void validate() const {
    if (confidence_threshold < 0.0 || confidence_threshold > 1.0) {
      throw std::invalid_argument("DistillConfig: threshold must be in [0,1]");
    }
    if (include_downscaled && !(down_beta > 0.0 && down_beta < 1.0)) {
      throw std::invalid_argument("DistillConfig: down_beta must be in (0,1)");
    }
  }
};

/// Removes Small non-crowd annotations. iscrowd regions are kept at every
/// size (ignore-regions, not training targets); images are kept even when
/// emptied. Size class comes from the annotation's area field.
inline AnnotatedDataset strip_small(const AnnotatedDataset& d, const SizeThresholds& t = {}) {
  AnnotatedDataset out;
  out.images = d.images;
  out.categories = d.categories;
  out.annotations.reserve(d.annotations.size());
  for (const auto& a : d.annotations) {
    if (a.iscrowd || classify_size(a.area, t) != SizeClass::Small) {
      out.annotations.push_back(a);
    }
  }
  return out;
}

struct SynthesisResult {
  AnnotatedDataset dataset;
  ordered_json manifest = ordered_json::object();  // new image_id -> provenance
  int skipped = 0;
};

namespace detail {

struct SynthPlan {
  std::size_t source_index;
  std::int64_t new_image_id;
  int out_w;
  int out_h;
  std::string file_name;
};

inline std::string synthetic_file_name(const std::string& source_file_name, std::size_t k) {
  std::filesystem::path p(source_file_name);
  const std::string stem = p.stem().string();
  p.replace_filename(stem + "__syn" + std::to_string(k) + ".ppm");
  return p.generic_string();
}

/// Seeded pick of n_syn source image indices: a deterministic shuffle prefix,
/// or uniform draws with replacement when more copies than originals.
inline std::vector<std::size_t> select_sources(std::size_t n_orig, std::int64_t n_syn,
                                               std::uint64_t seed) {
  std::vector<std::size_t> selected;
  if (n_orig == 0 || n_syn <= 0) return selected;
  const std::uint64_t key = hash_combine(seed, "synthesis_selection");
  if (static_cast<std::size_t>(n_syn) <= n_orig) {
    std::vector<std::size_t> order(n_orig);
    std::iota(order.begin(), order.end(), std::size_t{0});
    deterministic_shuffle(order, key);
    selected.assign(order.begin(), order.begin() + n_syn);
  } else {
    Rng rng(key);
    selected.reserve(static_cast<std::size_t>(n_syn));
    for (std::int64_t i = 0; i < n_syn; ++i) {
      selected.push_back(static_cast<std::size_t>(rng.uniform_index(n_orig)));
    }
  }
  return selected;
}

struct SynthOps {
  // out dims for a source record; nullopt = skip this copy
  std::function<std::optional<std::pair<int, int>>(const ImageRecord&)> plan_dims;
  std::function<ImageBuffer(const ImageBuffer&)> transform;
  std::function<Annotation(const Annotation&)> map_annotation;  // geometry only; ids set later
  std::string transform_name;
  ordered_json parameters;
};

inline SynthesisResult synthesize_copies(const AnnotatedDataset& d,
                                         const std::filesystem::path& images_root,
                                         std::int64_t n_syn, std::uint64_t seed,
                                         const SynthOps& ops, int jobs) {
  SynthesisResult result;
  result.dataset.images = d.images;
  result.dataset.annotations = d.annotations;
  result.dataset.categories = d.categories;

  const std::vector<std::size_t> selected = select_sources(d.images.size(), n_syn, seed);

  std::vector<SynthPlan> plans;
  plans.reserve(selected.size());
  std::int64_t next_image_id = d.max_image_id() + 1;
  for (std::size_t src : selected) {
    const ImageRecord& rec = d.images[src];
    const auto dims = ops.plan_dims(rec);
    if (!dims) {
      ++result.skipped;
      continue;
    }
    SynthPlan plan{src, next_image_id++, dims->first, dims->second,
                   synthetic_file_name(rec.file_name, plans.size())};
    plans.push_back(std::move(plan));
  }

  parallel_for(plans.size(), jobs, [&](std::size_t i) {
    const SynthPlan& plan = plans[i];
    const std::filesystem::path src_path = images_root / d.images[plan.source_index].file_name;
    if (!std::filesystem::exists(src_path)) {
      throw IoError("missing image file: " + src_path.string());
    }
    const ImageBuffer img = load_image(src_path);
    save_image(ops.transform(img), images_root / plan.file_name);
  });

  // Sequential id assembly so ids do not depend on worker count.
  std::int64_t next_ann_id = d.max_annotation_id() + 1;
  for (const SynthPlan& plan : plans) {
    const ImageRecord& src = d.images[plan.source_index];
    result.dataset.images.push_back({plan.new_image_id, plan.out_w, plan.out_h, plan.file_name});
    for (const auto& a : d.annotations) {
      if (a.image_id != src.id) continue;
      Annotation copy = ops.map_annotation(a);
      copy.id = next_ann_id++;
      copy.image_id = plan.new_image_id;
      result.dataset.annotations.push_back(std::move(copy));
    }
    ordered_json entry{{"source_image_id", src.id},
                       {"transform", ops.transform_name},
                       {"parameters", ops.parameters}};
    result.manifest[std::to_string(plan.new_image_id)] = std::move(entry);
  }

  result.dataset.validate();
  return result;
}

}  // namespace detail

/// Adds downscaled image copies until synthetic : original matches the mix
/// ratio. Copies get fresh ids; boxes scale by beta, areas by beta^2. Copies
/// that would shrink below 8 px on a side are skipped and counted.
inline SynthesisResult synthesize_down_train(const AnnotatedDataset& d,
                                             const std::filesystem::path& images_root,
                                             const DownTrainConfig& cfg, int jobs = 0) {
  cfg.validate();
  const double beta = cfg.beta;
  detail::SynthOps ops;
  ops.plan_dims = [beta](const ImageRecord& rec) -> std::optional<std::pair<int, int>> {
    const int w = static_cast<int>(std::llround(rec.width * beta));
    const int h = static_cast<int>(std::llround(rec.height * beta));
    if (w < 8 || h < 8) return std::nullopt;
    return std::make_pair(w, h);
  };
  ops.transform = [beta](const ImageBuffer& img) { return resize_bilinear(img, beta); };
  ops.map_annotation = [beta](const Annotation& a) {
    Annotation copy = a;
    copy.bbox = scale_box(a.bbox, beta);
    copy.area = a.area * beta * beta;
    return copy;
  };
  ops.transform_name = "downscale";
  ops.parameters = ordered_json{{"beta", beta}};
  return detail::synthesize_copies(d, images_root,
                                   cfg.mix.synthetic_count(static_cast<std::int64_t>(d.images.size())),
                                   cfg.seed, ops, jobs);
}

/// Adds appearance-degraded copies (Gaussian blur or downscale-then-upscale);
/// dimensions and annotation geometry are reused verbatim.
inline SynthesisResult synthesize_augmented(const AnnotatedDataset& d,
                                            const std::filesystem::path& images_root,
                                            const AugmentConfig& cfg, int jobs = 0) {
  cfg.validate();
  detail::SynthOps ops;
  if (cfg.mode == AugmentConfig::Mode::Blur) {
    const GaussianSpec spec = cfg.blur;
    ops.plan_dims = [](const ImageRecord& rec) {
      return std::optional<std::pair<int, int>>(std::make_pair(rec.width, rec.height));
    };
    ops.transform = [spec](const ImageBuffer& img) { return gaussian_blur(img, spec); };
    ops.transform_name = "gaussian_blur";
    ops.parameters = ordered_json{{"kernel_size", spec.kernel_size}, {"sigma", spec.sigma}};
  } else {
    const double gamma = cfg.gamma;
    ops.plan_dims = [gamma](const ImageRecord& rec) -> std::optional<std::pair<int, int>> {
      if (rec.width < gamma || rec.height < gamma) return std::nullopt;
      return std::make_pair(rec.width, rec.height);
    };
    ops.transform = [gamma](const ImageBuffer& img) { return down_up(img, gamma); };
    ops.transform_name = "down_up";
    ops.parameters = ordered_json{{"gamma", gamma}};
  }
  ops.map_annotation = [](const Annotation& a) { return a; };
  return detail::synthesize_copies(d, images_root,
                                   cfg.mix.synthetic_count(static_cast<std::int64_t>(d.images.size())),
                                   cfg.seed, ops, jobs);
}

struct DistillResult {
  AnnotatedDataset dataset;
  // accepted pseudo-label count per confidence threshold, tau = 0.00..1.00 step 0.05
  std::vector<std::pair<double, std::int64_t>> pseudo_count_curve;
  std::int64_t accepted_pseudo = 0;
  std::int64_t downscaled_small_kept = 0;
  ordered_json manifest = ordered_json::object();
  int skipped = 0;
};

/// Builds the distillation training set: originals with their M/L annotations
/// plus pseudo annotations from confident Small-range detections, optionally
/// plus downscaled image copies keeping only annotations that land Small.
inline DistillResult assemble_distillation(const AnnotatedDataset& d_ml, const DetectionSet& pseudo,
                                           const DistillConfig& cfg,
                                           const std::filesystem::path& images_root,
                                           int jobs = 0) {
  cfg.validate();
  pseudo.validate_against(d_ml);
  if (!pseudo.all_scored()) {
    throw MissingScoreError("assemble_distillation: pseudo detections must carry scores");
  }

  DistillResult result;
  const double small_max = cfg.size_thresholds.small_max;

  for (int i = 0; i <= 20; ++i) {
    const double tau = i * 0.05;
    std::int64_t n = 0;
    for (const auto& det : pseudo.detections) {
      if (*det.score > tau && det.bbox.area() < small_max) ++n;
    }
    result.pseudo_count_curve.emplace_back(tau, n);
  }

  AnnotatedDataset out;
  out.images = d_ml.images;
  out.annotations = d_ml.annotations;
  out.categories = d_ml.categories;

  auto images = d_ml.image_index();
  std::int64_t next_ann_id = d_ml.max_annotation_id() + 1;
  for (const auto& det : pseudo.detections) {
    if (!(*det.score > cfg.confidence_threshold) || !(det.bbox.area() < small_max)) continue;
    const ImageRecord& im = *images.at(det.image_id);
    auto clipped = clip_box(det.bbox, im.width, im.height);
    if (!clipped) continue;
    out.annotations.push_back(
        {next_ann_id++, det.image_id, det.category_id, *clipped, clipped->area(), false});
    ++result.accepted_pseudo;
  }

  if (cfg.include_downscaled) {
    const double beta = cfg.down_beta;
    const ordered_json parameters{{"beta", beta}};

    // Every image gets exactly one downscaled copy (no ratio sampling here);
    // rebalancing against the pseudo-labeled originals is left to the caller.
    std::vector<detail::SynthPlan> plans;
    std::int64_t next_image_id = d_ml.max_image_id() + 1;
    for (std::size_t i = 0; i < d_ml.images.size(); ++i) {
      const ImageRecord& rec = d_ml.images[i];
      const int w = static_cast<int>(std::llround(rec.width * beta));
      const int h = static_cast<int>(std::llround(rec.height * beta));
      if (w < 8 || h < 8) {
        ++result.skipped;
        continue;
      }
      plans.push_back({i, next_image_id++, w, h,
                       detail::synthetic_file_name(rec.file_name, plans.size())});
    }
    parallel_for(plans.size(), jobs, [&](std::size_t i) {
      const auto& plan = plans[i];
      const std::filesystem::path src_path = images_root / d_ml.images[plan.source_index].file_name;
      if (!std::filesystem::exists(src_path)) {
        throw IoError("missing image file: " + src_path.string());
      }
      save_image(resize_bilinear(load_image(src_path), beta), images_root / plan.file_name);
    });

    for (const auto& plan : plans) {
      const ImageRecord& src = d_ml.images[plan.source_index];
      out.images.push_back({plan.new_image_id, plan.out_w, plan.out_h, plan.file_name});
      for (const auto& a : d_ml.annotations) {
        if (a.image_id != src.id) continue;
        Annotation copy = a;
        copy.bbox = scale_box(a.bbox, beta);
        copy.area = a.area * beta * beta;
        const bool keep =
            copy.iscrowd || classify_size(copy.area, cfg.size_thresholds) == SizeClass::Small;
        if (!keep) continue;
        copy.id = next_ann_id++;
        copy.image_id = plan.new_image_id;
        if (!copy.iscrowd) ++result.downscaled_small_kept;
        out.annotations.push_back(std::move(copy));
      }
      result.manifest[std::to_string(plan.new_image_id)] = ordered_json{
          {"source_image_id", src.id}, {"transform", "downscale"}, {"parameters", parameters}};
    }
  }

  out.validate();
  result.dataset = std::move(out);
  return result;
}

}  // namespace smallscale
