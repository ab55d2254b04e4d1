#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tkf/ingest.hpp"

namespace tkf {

inline constexpr std::size_t kStructuralDim = 2048;
inline constexpr std::size_t kSemanticDim = 768;
inline constexpr std::string_view kCaptionPrompt =
    "In one sentence, describe the visible content of this provided image.";
inline constexpr std::string_view kFallbackCaption = "No visible content";
/// Environment variable overriding the configured sidecar endpoint.
inline constexpr const char* kProviderUrlEnv = "TRIPSS_PROVIDER_URL";

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct StructuralEmbedding {
  std::vector<float> vector;
  std::string provider_id;
};

struct SemanticEmbedding {
  std::vector<float> vector;
  std::string provider_id;
};

struct Caption {
  std::string raw;
  std::string sanitized;
  bool is_fallback = false;
};

enum class EmbeddingKind { structural, semantic };
std::string_view to_string(EmbeddingKind kind);

std::vector<std::string> default_refusal_keywords();

/// Maps refusals, empty and whitespace-only answers to the fallback caption;
/// otherwise returns the trimmed text. Keyword matching is case-insensitive.
std::string sanitize_caption(std::string_view raw, std::span<const std::string> keywords);
std::string sanitize_caption(std::string_view raw);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Unit vector of length `dim` drawn from a splitmix64 stream seeded by the
/// FNV-1a hash of `bytes`. The algorithm is fixed, so outputs are identical
/// on every platform.
std::vector<double> stub_embed(std::span<const std::uint8_t> bytes, std::size_t dim);

/// Hash of a frame's pixel content and dimensions (not its position).
std::uint64_t frame_hash(const SampledFrame& frame);

/// Raw model access. Implementations return unvalidated vectors; the free
/// functions below enforce the dimension and finiteness contract.
class FeatureProvider {
 public:
  virtual ~FeatureProvider() = default;
  virtual std::string id() const = 0;
  virtual std::vector<float> embed_image(const SampledFrame& frame) = 0;
  virtual std::string caption(const SampledFrame& frame, std::string_view prompt) = 0;
  virtual std::vector<float> embed_text(std::string_view text) = 0;
};

/// Offline deterministic provider built on stub_embed.
class StubProvider final : public FeatureProvider {
 public:
  std::string id() const override { return "stub-v1"; }
  std::vector<float> embed_image(const SampledFrame& frame) override;
  std::string caption(const SampledFrame& frame, std::string_view prompt) override;
  std::vector<float> embed_text(std::string_view text) override;
};

struct RetryPolicy {
  int attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
};

struct HttpProviderOptions {
  std::string endpoint = "http://127.0.0.1:8765";
  /// Cache identity; defaults to "sidecar@<endpoint>" when empty.
  std::string provider_id;
  RetryPolicy retry;
  std::chrono::milliseconds timeout{30000};
};

/// Client for the sidecar JSON/HTTP protocol:
///   POST /embed/image {"image": base64 PNG}       -> {"vector", "dim", "provider_id"}
///   POST /embed/text  {"text": str}               -> {"vector", "dim", "provider_id"}
///   POST /caption     {"image", "prompt", "do_sample": false} -> {"caption", "provider_id"}
/// Transport failures and 5xx answers are retried with exponential backoff.
class HttpProvider final : public FeatureProvider {
 public:
  explicit HttpProvider(HttpProviderOptions options);
  std::string id() const override;
  std::vector<float> embed_image(const SampledFrame& frame) override;
  std::string caption(const SampledFrame& frame, std::string_view prompt) override;
  std::vector<float> embed_text(std::string_view text) override;

  /// GET /health; true when the sidecar answers {"status": "ok"}.
  bool healthy();

 private:
  std::string post_json(const std::string& route, const std::string& body);
  std::vector<float> parse_vector_response(const std::string& body);

  HttpProviderOptions options_;
};

/// Provider that never answers; used in cache-only mode so every miss fails.
class CacheOnlyProvider final : public FeatureProvider {
 public:
  explicit CacheOnlyProvider(std::string provider_id) : provider_id_(std::move(provider_id)) {}
  std::string id() const override { return provider_id_; }
  std::vector<float> embed_image(const SampledFrame& frame) override;
  std::string caption(const SampledFrame& frame, std::string_view prompt) override;
  std::vector<float> embed_text(std::string_view text) override;

 private:
  std::string provider_id_;
};

/// Throws ProviderError("dimension mismatch A≠B") or ("non-finite embedding").
void validate_embedding(std::span<const float> vector, std::size_t expected_dim);

StructuralEmbedding structural_embedding(FeatureProvider& provider, const SampledFrame& frame);

/// Never throws on provider failure: degrades to the fallback caption and logs
/// a warning.
Caption caption_frame(FeatureProvider& provider, const SampledFrame& frame,
                      std::span<const std::string> keywords);
Caption caption_frame(FeatureProvider& provider, const SampledFrame& frame);

SemanticEmbedding semantic_embedding(FeatureProvider& provider, const Caption& caption);

struct CacheKey {
  std::string video_id;
  std::int64_t sample_index = 0;
  std::string provider_id;
  EmbeddingKind kind = EmbeddingKind::structural;
};

/// On-disk embedding cache. Per video and (kind, provider) there is one
/// little-endian f32 row file plus a JSON index; captions are JSON lines.
///   <root>/<video_id>/<kind>__<provider>.f32
///   <root>/<video_id>/<kind>__<provider>.json   {"dim", "provider_id", "rows": {"<sample>": row}}
///   <root>/<video_id>/captions__<provider>.jsonl {"sample_index", "raw", "sanitized"}
/// Reads may run concurrently; writes are serialized.
class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path root);

  const std::filesystem::path& root() const noexcept { return root_; }

  std::optional<std::vector<float>> get(const CacheKey& key);
  void put(const CacheKey& key, std::span<const float> vector);

  std::optional<Caption> get_caption(const std::string& video_id, std::int64_t sample_index,
                                     const std::string& provider_id);
  void put_caption(const std::string& video_id, std::int64_t sample_index,
                   const std::string& provider_id, const Caption& caption);

 private:
  struct Table {
    std::size_t dim = 0;
    std::map<std::int64_t, std::size_t> rows;
    std::vector<float> data;
  };
  struct CaptionTable {
    std::map<std::int64_t, Caption> entries;
  };

  std::filesystem::path table_stem(const std::string& video_id, std::string_view kind,
                                   const std::string& provider_id) const;
  Table& load_table(const CacheKey& key);
  CaptionTable& load_captions(const std::string& video_id, const std::string& provider_id);

  std::filesystem::path root_;
  std::shared_mutex mutex_;
  std::map<std::string, Table> tables_;
  std::map<std::string, CaptionTable> captions_;
};

struct FrameEmbeddings {
  StructuralEmbedding structural;
  Caption caption;
  SemanticEmbedding semantic;
};

struct EmbedderOptions {
  int max_in_flight = 4;
  std::vector<std::string> refusal_keywords = default_refusal_keywords();
};

/// Cache-aware front end over a provider. A miss calls the provider exactly
/// once per key and stores the result.
class FrameEmbedder {
 public:
  FrameEmbedder(FeatureProvider& provider, EmbeddingCache* cache, EmbedderOptions options = {});

  FrameEmbeddings embed(const SampledFrame& frame);

  /// Embeds every frame with at most max_in_flight concurrent provider
  /// requests. Output order follows the input.
  std::vector<FrameEmbeddings> embed_all(std::span<const SampledFrame> frames);

 private:
  FeatureProvider& provider_;
  EmbeddingCache* cache_;
  EmbedderOptions options_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace tkf
