#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "smallscale/coco.hpp"
#include "smallscale/raster.hpp"
#include "smallscale/rng.hpp"

namespace smallscale {

/// One inference request. Exactly one of buffer/path is populated; scale_tag
/// labels the applied input scaling for caching and replay.
struct DetectRequest {
  std::int64_t image_id = 0;
  std::optional<ImageBuffer> image;
  std::optional<std::filesystem::path> path;
  std::string scale_tag;

  void validate() const {
    if (image.has_value() == path.has_value()) {
      throw std::invalid_argument("DetectRequest: exactly one of buffer/path must be set");
    }
  }
};

/// detect() must be safe under concurrent invocation and deterministic given
/// the full adapter configuration and request.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<Detection> detect(const DetectRequest& request) const = 0;
};

// ---------------------------------------------------------------------------
// Oracle adapter: perturbs ground truth with size-dependent recall so the
// two-pass upscaling benefit is reproducible without a trained network.
// Recall is keyed on the box's area at the *presented* resolution.
// ---------------------------------------------------------------------------

struct OracleConfig {
  std::uint64_t seed = 0;
  double small_recall = 0.2;
  double medium_recall = 0.8;
  double large_recall = 0.9;
  // applied to natively-Small boxes whose presented area reaches Medium/Large
  double upscaled_small_recall = 0.8;
  double localization_noise = 0.05;  // corner stddev as fraction of box size
  double false_positive_rate = 0.5;  // expected FPs per image (Poisson)
  double tp_score_min = 0.6, tp_score_max = 1.0;
  double fp_score_min = 0.1, fp_score_max = 0.6;
  SizeThresholds size_thresholds{};

  double recall_for(SizeClass c) const {
    switch (c) {
      case SizeClass::Small: return small_recall;
      case SizeClass::Medium: return medium_recall;
      default: return large_recall;
    }
  }

  void validate() const {
    for (double p : {small_recall, medium_recall, large_recall, upscaled_small_recall}) {
      if (p < 0.0 || p > 1.0) throw std::invalid_argument("OracleConfig: recall outside [0,1]");
    }
    if (localization_noise < 0.0 || false_positive_rate < 0.0) {
      throw std::invalid_argument("OracleConfig: noise and FP rate must be >= 0");
    }
    if (!(0.0 <= tp_score_min && tp_score_min <= tp_score_max && tp_score_max <= 1.0) ||
        !(0.0 <= fp_score_min && fp_score_min <= fp_score_max && fp_score_max <= 1.0)) {
      throw std::invalid_argument("OracleConfig: score ranges must be ordered within [0,1]");
    }
  }
};

class OracleDetector : public Detector {
 public:
  OracleDetector(AnnotatedDataset dataset, OracleConfig config)
      : dataset_(std::move(dataset)), config_(config) {
    config_.validate();
    for (const auto& im : dataset_.images) records_[im.id] = &im;
    for (const auto& a : dataset_.annotations) {
      if (!a.iscrowd) annotations_[a.image_id].push_back(&a);
    }
  }

  std::vector<Detection> detect(const DetectRequest& request) const override {
    request.validate();
    auto rec_it = records_.find(request.image_id);
    if (rec_it == records_.end()) {
      throw std::invalid_argument("OracleDetector: unknown image id " +
                                  std::to_string(request.image_id));
    }
    const ImageRecord& native = *rec_it->second;

    double presented_w, presented_h;
    if (request.image) {
      presented_w = request.image->width;
      presented_h = request.image->height;
    } else {
      const auto dims = read_image_header(*request.path);
      presented_w = dims[0];
      presented_h = dims[1];
    }
    const double sx = presented_w / native.width;
    const double sy = presented_h / native.height;

    const std::uint64_t image_key =
        hash_combine(hash_combine(config_.seed, static_cast<std::uint64_t>(request.image_id)),
                     request.scale_tag);

    std::vector<Detection> out;
    auto ann_it = annotations_.find(request.image_id);
    if (ann_it != annotations_.end()) {
      for (const Annotation* a : ann_it->second) {
        Rng rng(hash_combine(image_key, static_cast<std::uint64_t>(a->id)));

        const BBox presented(a->bbox.x * sx, a->bbox.y * sy, a->bbox.w * sx, a->bbox.h * sy);
        const SizeClass native_class = classify_box(a->bbox, config_.size_thresholds);
        const SizeClass presented_class = classify_box(presented, config_.size_thresholds);
        const bool upscaled_small =
            native_class == SizeClass::Small && presented_class != SizeClass::Small;
        const double recall = upscaled_small ? config_.upscaled_small_recall
                                             : config_.recall_for(presented_class);
        if (!rng.bernoulli(recall)) continue;

        const double noise_x = config_.localization_noise * presented.w;
        const double noise_y = config_.localization_noise * presented.h;
        double x1 = presented.x + rng.gaussian(0.0, noise_x);
        double x2 = presented.x2() + rng.gaussian(0.0, noise_x);
        double y1 = presented.y + rng.gaussian(0.0, noise_y);
        double y2 = presented.y2() + rng.gaussian(0.0, noise_y);
        if (x2 - x1 < 1e-6) x2 = x1 + 1e-6;
        if (y2 - y1 < 1e-6) y2 = y1 + 1e-6;
        const auto clipped = clip_box(BBox(x1, y1, x2 - x1, y2 - y1), presented_w, presented_h);
        if (!clipped) continue;

        out.push_back({request.image_id, a->category_id, *clipped,
                       rng.uniform(config_.tp_score_min, config_.tp_score_max), std::nullopt});
      }
    }

    if (!dataset_.categories.empty() && config_.false_positive_rate > 0.0) {
      Rng rng(hash_combine(image_key, "false_positives"));
      const std::int64_t n_fp = rng.poisson(config_.false_positive_rate);
      for (std::int64_t i = 0; i < n_fp; ++i) {
        const double max_w = std::max(8.0, presented_w / 2.0);
        const double max_h = std::max(8.0, presented_h / 2.0);
        double w = std::exp(rng.uniform(std::log(4.0), std::log(max_w)));
        double h = std::exp(rng.uniform(std::log(4.0), std::log(max_h)));
        w = std::min(w, presented_w - 1e-3);
        h = std::min(h, presented_h - 1e-3);
        const double x = rng.uniform(0.0, presented_w - w);
        const double y = rng.uniform(0.0, presented_h - h);
        const auto cat = dataset_.categories[rng.uniform_index(dataset_.categories.size())].id;
        out.push_back({request.image_id, cat, BBox(x, y, w, h),
                       rng.uniform(config_.fp_score_min, config_.fp_score_max), std::nullopt});
      }
    }
    return out;
  }

  const OracleConfig& config() const { return config_; }

 private:
  AnnotatedDataset dataset_;
  OracleConfig config_;
  std::unordered_map<std::int64_t, const ImageRecord*> records_;
  std::unordered_map<std::int64_t, std::vector<const Annotation*>> annotations_;
};

// ---------------------------------------------------------------------------
// Cached adapter: replays stored results keyed by (image_id, scale_tag).
// File format is the results array with an optional "scale_tag" per entry.
// ---------------------------------------------------------------------------

class CachedDetector : public Detector {
 public:
  explicit CachedDetector(const std::filesystem::path& path, bool missing_as_empty = false)
      : missing_as_empty_(missing_as_empty) {
    json root = detail::parse_json_file(path);
    if (!root.is_array()) throw ParseError(path.string() + ": expected a results array");
    for (const auto& j : root) {
      Detection det{j.at("image_id").get<std::int64_t>(),
                    j.at("category_id").get<std::int64_t>(),
                    detail::bbox_from_json(j.at("bbox"), "cached detection"),
                    std::nullopt,
                    std::nullopt};
      if (j.contains("score") && !j["score"].is_null()) det.score = j["score"].get<double>();
      if (j.contains("pass") && !j["pass"].is_null()) det.pass_index = j["pass"].get<int>();
      const std::string tag = j.value("scale_tag", std::string{});
      cache_[det.image_id][tag].push_back(std::move(det));
    }
  }

  std::vector<Detection> detect(const DetectRequest& request) const override {
    request.validate();
    auto im_it = cache_.find(request.image_id);
    if (im_it != cache_.end()) {
      auto tag_it = im_it->second.find(request.scale_tag);
      if (tag_it != im_it->second.end()) return tag_it->second;
    }
    if (missing_as_empty_) return {};
    throw CacheMissError("no cached detections for image " + std::to_string(request.image_id) +
                         " scale_tag '" + request.scale_tag + "'");
  }

 private:
  bool missing_as_empty_;
  std::unordered_map<std::int64_t, std::map<std::string, std::vector<Detection>>> cache_;
};

// ---------------------------------------------------------------------------
// Subprocess adapter: one process invocation per image (argv = cmd... +
// image_path, results JSON on stdout), or a persistent batch child fed
// newline-delimited JSON requests.
// ---------------------------------------------------------------------------

namespace detail {

struct PipeEnds {
  int read_fd = -1;
  int write_fd = -1;
};

inline PipeEnds make_pipe() {
  int fds[2];
  if (pipe(fds) != 0) throw AdapterError("pipe() failed");
  return {fds[0], fds[1]};
}

struct TempImageFile {
  std::filesystem::path path;
  bool owned = false;

  ~TempImageFile() {
    if (owned) {
      std::error_code ec;
      std::filesystem::remove(path, ec);
    }
  }
};

inline TempImageFile materialize_request_image(const DetectRequest& request) {
  static std::atomic<std::uint64_t> counter{0};
  if (request.path) return {*request.path, false};
  auto tmp = std::filesystem::temp_directory_path() /
             ("smallscale_req_" + std::to_string(::getpid()) + "_" +
              std::to_string(counter.fetch_add(1)) + ".ppm");
  save_image(*request.image, tmp);
  return {tmp, true};
}

}  // namespace detail

class SubprocessDetector : public Detector {
 public:
  struct Options {
    double timeout_seconds = 120.0;
    int max_concurrency = 0;  // 0 = hardware concurrency
    bool batch_mode = false;
  };

  SubprocessDetector(std::vector<std::string> command, Options options = {})
      : command_(std::move(command)), options_(options),
        slots_(options.max_concurrency > 0
                   ? options.max_concurrency
                   : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()))) {
    if (command_.empty()) {
      throw std::invalid_argument("SubprocessDetector: empty command");
    }
  }

  ~SubprocessDetector() override { stop_batch_child(); }

  std::vector<Detection> detect(const DetectRequest& request) const override {
    request.validate();
    const auto img = detail::materialize_request_image(request);
    return options_.batch_mode ? detect_batch(request, img.path)
                               : detect_single(request, img.path);
  }

 private:
  std::vector<Detection> parse_results(const std::string& text, std::int64_t image_id) const {
    json root;
    try {
      root = json::parse(text);
    } catch (const json::parse_error& e) {
      throw AdapterError(std::string("detector produced malformed JSON: ") + e.what(), text);
    }
    if (!root.is_array()) throw AdapterError("detector output is not a JSON array", text);
    std::vector<Detection> out;
    for (const auto& j : root) {
      Detection det{j.value("image_id", image_id),
                    j.at("category_id").get<std::int64_t>(),
                    detail::bbox_from_json(j.at("bbox"), "subprocess detection"),
                    std::nullopt,
                    std::nullopt};
      if (j.contains("score") && !j["score"].is_null()) {
        const double s = j["score"].get<double>();
        if (s < 0.0 || s > 1.0) {
          throw AdapterError("detector emitted score outside [0,1]: " + std::to_string(s));
        }
        det.score = s;
      }
      det.image_id = image_id;
      out.push_back(std::move(det));
    }
    return out;
  }

  std::vector<Detection> detect_single(const DetectRequest& request,
                                       const std::filesystem::path& image_path) const {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};

    auto out_pipe = detail::make_pipe();
    auto err_pipe = detail::make_pipe();
    const pid_t pid = fork();
    if (pid < 0) {
      close(out_pipe.read_fd); close(out_pipe.write_fd);
      close(err_pipe.read_fd); close(err_pipe.write_fd);
      throw AdapterError("fork() failed");
    }
    if (pid == 0) {
      dup2(out_pipe.write_fd, STDOUT_FILENO);
      dup2(err_pipe.write_fd, STDERR_FILENO);
      close(out_pipe.read_fd); close(out_pipe.write_fd);
      close(err_pipe.read_fd); close(err_pipe.write_fd);
      std::vector<char*> argv;
      for (const auto& s : command_) argv.push_back(const_cast<char*>(s.c_str()));
      std::string path_arg = image_path.string();
      argv.push_back(path_arg.data());
      argv.push_back(nullptr);
      execvp(argv[0], argv.data());
      _exit(127);
    }
    close(out_pipe.write_fd);
    close(err_pipe.write_fd);

    std::string stdout_text, stderr_text;
    const bool timed_out = !drain_pipes(out_pipe.read_fd, err_pipe.read_fd, stdout_text,
                                        stderr_text, options_.timeout_seconds);
    close(out_pipe.read_fd);
    close(err_pipe.read_fd);

    int status = 0;
    if (timed_out) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      throw AdapterError("detector command timed out after " +
                             std::to_string(options_.timeout_seconds) + " s",
                         stderr_text);
    }
    waitpid(pid, &status, 0);
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
      throw AdapterError("detector command failed (exit " + std::to_string(code) + ")",
                         stderr_text, code);
    }
    return parse_results(stdout_text, request.image_id);
  }

  // Reads both pipes until EOF; false on deadline expiry.
  static bool drain_pipes(int out_fd, int err_fd, std::string& stdout_text,
                          std::string& stderr_text, double timeout_seconds) {
    const auto deadline =
        std::chrono::steady_clock::now() +
        std::chrono::milliseconds(static_cast<std::int64_t>(timeout_seconds * 1000.0));
    bool out_open = true, err_open = true;
    char buf[4096];
    while (out_open || err_open) {
      struct pollfd fds[2];
      nfds_t n = 0;
      if (out_open) fds[n++] = {out_fd, POLLIN, 0};
      if (err_open) fds[n++] = {err_fd, POLLIN, 0};
      const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 deadline - std::chrono::steady_clock::now())
                                 .count();
      if (remaining <= 0) return false;
      const int rc = poll(fds, n, static_cast<int>(std::min<std::int64_t>(remaining, 1000)));
      if (rc < 0) throw AdapterError("poll() failed");
      for (nfds_t i = 0; i < n; ++i) {
        if (!(fds[i].revents & (POLLIN | POLLHUP))) continue;
        const ssize_t got = read(fds[i].fd, buf, sizeof(buf));
        if (got > 0) {
          (fds[i].fd == out_fd ? stdout_text : stderr_text).append(buf, got);
        } else if (got == 0) {
          (fds[i].fd == out_fd ? out_open : err_open) = false;
        }
      }
    }
    return true;
  }

  // --- batch mode: persistent child, one JSON request line per image -------

  struct BatchChild {
    pid_t pid = -1;
    int to_child = -1;
    int from_child = -1;
    std::string pending;
  };

  std::vector<Detection> detect_batch(const DetectRequest& request,
                                      const std::filesystem::path& image_path) const {
    std::lock_guard<std::mutex> lock(batch_mutex_);
    if (batch_.pid < 0) start_batch_child();

    ordered_json req{{"image_path", image_path.string()}, {"image_id", request.image_id}};
    const std::string line = req.dump() + "\n";
    if (write(batch_.to_child, line.data(), line.size()) !=
        static_cast<ssize_t>(line.size())) {
      throw AdapterError("failed to write request to batch detector");
    }
    return parse_results(read_batch_line(), request.image_id);
  }

  std::string read_batch_line() const {
    const auto deadline =
        std::chrono::steady_clock::now() +
        std::chrono::milliseconds(static_cast<std::int64_t>(options_.timeout_seconds * 1000.0));
    char buf[4096];
    for (;;) {
      const auto nl = batch_.pending.find('\n');
      if (nl != std::string::npos) {
        std::string line = batch_.pending.substr(0, nl);
        batch_.pending.erase(0, nl + 1);
        return line;
      }
      const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(
                                 deadline - std::chrono::steady_clock::now())
                                 .count();
      if (remaining <= 0) throw AdapterError("batch detector timed out");
      struct pollfd fd {batch_.from_child, POLLIN, 0};
      if (poll(&fd, 1, static_cast<int>(std::min<std::int64_t>(remaining, 1000))) < 0) {
        throw AdapterError("poll() failed");
      }
      if (fd.revents & (POLLIN | POLLHUP)) {
        const ssize_t got = read(batch_.from_child, buf, sizeof(buf));
        if (got > 0) {
          batch_.pending.append(buf, got);
        } else if (got == 0) {
          throw AdapterError("batch detector closed its output");
        }
      }
    }
  }

  void start_batch_child() const {
    auto in_pipe = detail::make_pipe();   // parent -> child stdin
    auto out_pipe = detail::make_pipe();  // child stdout -> parent
    const pid_t pid = fork();
    if (pid < 0) throw AdapterError("fork() failed");
    if (pid == 0) {
      dup2(in_pipe.read_fd, STDIN_FILENO);
      dup2(out_pipe.write_fd, STDOUT_FILENO);
      close(in_pipe.read_fd); close(in_pipe.write_fd);
      close(out_pipe.read_fd); close(out_pipe.write_fd);
      std::vector<char*> argv;
      for (const auto& s : command_) argv.push_back(const_cast<char*>(s.c_str()));
      argv.push_back(nullptr);
      execvp(argv[0], argv.data());
      _exit(127);
    }
    close(in_pipe.read_fd);
    close(out_pipe.write_fd);
    batch_.pid = pid;
    batch_.to_child = in_pipe.write_fd;
    batch_.from_child = out_pipe.read_fd;
  }

  void stop_batch_child() {
    if (batch_.pid >= 0) {
      close(batch_.to_child);
      close(batch_.from_child);
      int status = 0;
      waitpid(batch_.pid, &status, 0);
      batch_.pid = -1;
    }
  }

  std::vector<std::string> command_;
  Options options_;
  mutable std::counting_semaphore<> slots_;
  mutable std::mutex batch_mutex_;
  mutable BatchChild batch_;
};

}  // namespace smallscale
