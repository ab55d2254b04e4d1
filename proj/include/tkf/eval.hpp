#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tkf {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Normalized ground truth:
///   {"video_id": str, "fps": number, "n_frames": int, "annotators": [[int, ...], ...]}
/// Extra keys (for example converter provenance) are ignored.
struct GroundTruth {
  std::string video_id;
  double fps = 0.0;
  std::int64_t n_frames = 0;
  std::vector<std::vector<std::int64_t>> annotators;  // each sorted, unique
};

GroundTruth parse_ground_truth(const std::string& json_text);
GroundTruth load_ground_truth(const std::filesystem::path& path);

/// Greedy one-to-one matching: all pairs with |p - g| <= tau_frames are taken
/// in order of (distance, p, g) and accepted when both ends are free.
std::size_t match_keyframes(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& gt,
                            std::int64_t tau_frames);

struct VideoScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Per-annotator precision, recall and F1, averaged over annotators.
/// tau_frames = round(tau_seconds * fps).
VideoScore f1_for_video(const std::vector<std::int64_t>& pred, const GroundTruth& gt,
                        double tau_seconds = 1.0);

inline constexpr const char* kMatchingRule = "greedy one-to-one by (distance, pred, gt)";
inline constexpr const char* kAnnotatorAggregation = "mean over annotators";

struct EvalProtocol {
  double tau_seconds = 1.0;
  std::string matching = kMatchingRule;
  std::string annotator_aggregation = kAnnotatorAggregation;
};

struct EvalReport {
  std::map<std::string, VideoScore> per_video;
  double mean_f1 = 0.0;
  EvalProtocol protocol;
};

EvalReport aggregate(const std::map<std::string, VideoScore>& per_video, double tau_seconds = 1.0);

/// Sorted keys, 2-space indent.
std::string to_json(const EvalReport& report);

}  // namespace tkf
