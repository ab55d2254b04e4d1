#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tkf/cluster.hpp"
#include "tkf/eval.hpp"
#include "tkf/refine.hpp"

namespace tkf {

/// A failure inside run_extract, tagged with the stage that raised it:
/// ingest, perceptual, providers, fusion, cluster, refine or output.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ProviderMode { stub, remote, cache_only };
std::string to_string(ProviderMode mode);
ProviderMode provider_mode_from_string(const std::string& text);

struct ProviderConfig {
  ProviderMode mode = ProviderMode::remote;
  std::string endpoint = "http://127.0.0.1:8765";
  /// Cache identity for remote and cache-only modes; "sidecar@<endpoint>" when empty.
  std::string provider_id;
  /// Embedding cache directory; caching is off when empty.
  std::string cache_dir;
  int retry_attempts = 3;
  int retry_backoff_ms = 500;
  int timeout_ms = 30000;
  int max_in_flight = 4;
  bool operator==(const ProviderConfig&) const = default;
};

struct PipelineConfig {
  double sampling_rate = 1.0;
  ProviderConfig providers;
  int fusion_k = kFusedDim;
  /// Empty means the default grid for the video's frame count.
  std::vector<ClusterParams> cluster_grid;
  QualityThresholds quality;
  double dedup_threshold = kDedupThreshold;
  double eval_tau = 1.0;
  std::string output_dir = "out";
  int workers = 4;
  /// Also write per-frame color features, fused embeddings and the grid report.
  bool write_dumps = false;
  bool operator==(const PipelineConfig&) const = default;
};

/// Throws ConfigError on out-of-range values.
void validate_config(const PipelineConfig& config);

/// JSON text with sorted keys and 2-space indentation.
std::string config_to_json(const PipelineConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
/// Replaces the provider endpoint with TRIPSS_PROVIDER_URL when it is set.
void apply_env_overrides(PipelineConfig& config);

struct StageCounts {
  std::int64_t sampled = 0;
  std::int64_t clustered = 0;  // frames in some cluster
  std::int64_t medoids = 0;
  std::int64_t quality_kept = 0;
  std::int64_t deduped = 0;
};

struct ManifestKeyframe {
  std::int64_t sample_index = 0;
  std::int64_t source_index = 0;
  double timestamp = 0.0;
  int cluster = 0;
  std::string caption;
  bool caption_is_fallback = false;
  std::string image;  // file name inside the output directory
  QualityReport quality;
};

struct ManifestDrop {
  std::int64_t sample_index = 0;
  std::string stage;   // "quality" or "dedup"
  std::string reason;  // a quality drop reason or "near_duplicate"
};

struct SummaryManifest {
  std::string video_id;
  std::string source_path;
  double fps = 0.0;
  std::int64_t n_source_frames = 0;
  PipelineConfig config;
  StageCounts counts;
  int effective_k = 0;
  std::optional<ClusterParams> cluster_params;
  std::optional<double> dbcv;
  std::string cluster_selection;
  int n_clusters = 0;
  std::vector<ManifestKeyframe> keyframes;
  std::vector<ManifestDrop> drops;
  std::vector<QualityReport> quality_reports;
  std::vector<DedupDecision> dedup_decisions;
  std::string structural_provider;
  std::string semantic_provider;
  std::string contact_sheet;
  /// Wall-clock stamp; the only field allowed to differ between identical runs.
  std::string generated_at;
};

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kContactSheetName = "contact_sheet.png";

std::string manifest_to_json(const SummaryManifest& manifest);
SummaryManifest manifest_from_json(const std::string& json_text);
SummaryManifest load_manifest(const std::filesystem::path& path);

/// Runs ingest, features, fusion, clustering, refinement and output into
/// config.output_dir. Throws StageError; files written by the failed run are
/// removed, and so is the output directory if this run created it.
SummaryManifest run_extract(const PipelineConfig& config, const std::filesystem::path& video_path);

/// Scores every manifest.json under manifests_dir against
/// <ground_truth_dir>/<video_id>.json.
EvalReport run_eval(const std::filesystem::path& manifests_dir,
                    const std::filesystem::path& ground_truth_dir, double tau_seconds);

/// Human-readable summary of a manifest.
std::string inspect_manifest(const SummaryManifest& manifest);

}  // namespace tkf
