#include "tkf/providers.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "tkf/imageio.hpp"
#include "tkf/log.hpp"
#include "tkf/parallel.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace tkf {
namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<float> to_float(const std::vector<double>& v) {
  return {v.begin(), v.end()};
}

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

std::vector<std::uint8_t> frame_bytes(const SampledFrame& frame) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(frame.pixels.bytes().size() + 8);
  append_u32_le(bytes, static_cast<std::uint32_t>(frame.pixels.width()));
  append_u32_le(bytes, static_cast<std::uint32_t>(frame.pixels.height()));
  bytes.insert(bytes.end(), frame.pixels.bytes().begin(), frame.pixels.bytes().end());
  return bytes;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string safe_component(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  return out.empty() ? "_" : out;
}

void write_f32_le(std::ofstream& out, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) buf[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

std::vector<float> read_f32_le(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<float> values(buf.size() / 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[4 * i + b]) << (8 * b);
    values[i] = std::bit_cast<float>(bits);
  }
  return values;
}

}  // namespace

std::string_view to_string(EmbeddingKind kind) {
  return kind == EmbeddingKind::structural ? "structural" : "semantic";
}

std::vector<std::string> default_refusal_keywords() {
  return {"i cannot", "i'm sorry", "unable to", "no image", "cannot assist"};
}

std::string sanitize_caption(std::string_view raw, std::span<const std::string> keywords) {
  const std::string_view trimmed = trim(raw);
  if (trimmed.empty()) return std::string(kFallbackCaption);
  const std::string lower = lowercase(trimmed);
  for (const auto& kw : keywords) {
    if (!kw.empty() && lower.find(lowercase(kw)) != std::string::npos)
      return std::string(kFallbackCaption);
  }
  return std::string(trimmed);
}

std::string sanitize_caption(std::string_view raw) {
  static const std::vector<std::string> keywords = default_refusal_keywords();
  return sanitize_caption(raw, keywords);
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<double> stub_embed(std::span<const std::uint8_t> bytes, std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("stub_embed: dim must be positive");
  std::uint64_t state = fnv1a64(bytes);
  std::vector<double> v(dim);
  double norm2 = 0.0;
  for (auto& x : v) {
    const double u = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53;
    x = 2.0 * u - 1.0;
    norm2 += x * x;
  }
  if (norm2 == 0.0) {
    v[0] = 1.0;
    return v;
  }
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : v) x *= inv;
  return v;
}

std::uint64_t frame_hash(const SampledFrame& frame) { return fnv1a64(frame_bytes(frame)); }

// --- StubProvider -------------------------------------------------------------

std::vector<float> StubProvider::embed_image(const SampledFrame& frame) {
  return to_float(stub_embed(frame_bytes(frame), kStructuralDim));
}

std::string StubProvider::caption(const SampledFrame& frame, std::string_view) {
  return "Stub caption " + hex64(frame_hash(frame)) + ".";
}

std::vector<float> StubProvider::embed_text(std::string_view text) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(text.data());
  return to_float(stub_embed(std::span<const std::uint8_t>(p, text.size()), kSemanticDim));
}

// --- CacheOnlyProvider --------------------------------------------------------

std::vector<float> CacheOnlyProvider::embed_image(const SampledFrame& frame) {
  throw ProviderError("cache miss in cache-only mode (structural, sample " +
                      std::to_string(frame.sample_index) + ")");
}

std::string CacheOnlyProvider::caption(const SampledFrame& frame, std::string_view) {
  throw ProviderError("cache miss in cache-only mode (caption, sample " +
                      std::to_string(frame.sample_index) + ")");
}

std::vector<float> CacheOnlyProvider::embed_text(std::string_view) {
  throw ProviderError("cache miss in cache-only mode (semantic)");
}

// --- HttpProvider -------------------------------------------------------------

HttpProvider::HttpProvider(HttpProviderOptions options) : options_(std::move(options)) {
  if (options_.retry.attempts < 1) options_.retry.attempts = 1;
}

std::string HttpProvider::id() const {
  return options_.provider_id.empty() ? "sidecar@" + options_.endpoint : options_.provider_id;
}

std::string HttpProvider::post_json(const std::string& route, const std::string& body) {
  std::string last_error;
  auto backoff = options_.retry.initial_backoff;
  for (int attempt = 1; attempt <= options_.retry.attempts; ++attempt) {
    httplib::Client client(options_.endpoint);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    auto res = client.Post(route, body, "application/json");
    if (res) {
      if (res->status == 200) return res->body;
      if (res->status >= 400 && res->status < 500)
        throw ProviderError("provider rejected " + route + " (HTTP " + std::to_string(res->status) +
                            "): " + res->body);
      last_error = "HTTP " + std::to_string(res->status);
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < options_.retry.attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw ProviderError("provider unreachable: " + options_.endpoint + route + " after " +
                      std::to_string(options_.retry.attempts) + " attempts (" + last_error + ")");
}

std::vector<float> HttpProvider::parse_vector_response(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed provider response: ") + e.what());
  }
  if (!j.contains("vector") || !j["vector"].is_array())
    throw ProviderError("malformed provider response: missing \"vector\"");
  std::vector<float> v;
  v.reserve(j["vector"].size());
  for (const auto& x : j["vector"]) {
    v.push_back(x.is_number() ? static_cast<float>(x.get<double>())
                              : std::numeric_limits<float>::quiet_NaN());
  }
  if (j.contains("dim") && j["dim"].is_number_integer() &&
      j["dim"].get<std::size_t>() != v.size())
    throw ProviderError("malformed provider response: dim field disagrees with vector length");
  return v;
}

std::vector<float> HttpProvider::embed_image(const SampledFrame& frame) {
  const json req = {{"image", base64_encode(encode_png(frame.pixels))}};
  return parse_vector_response(post_json("/embed/image", req.dump()));
}

std::string HttpProvider::caption(const SampledFrame& frame, std::string_view prompt) {
  const json req = {{"image", base64_encode(encode_png(frame.pixels))},
                    {"prompt", std::string(prompt)},
                    {"do_sample", false}};
  const std::string body = post_json("/caption", req.dump());
  try {
    const json j = json::parse(body);
    if (!j.contains("caption") || !j["caption"].is_string())
      throw ProviderError("malformed provider response: missing \"caption\"");
    return j["caption"].get<std::string>();
  } catch (const json::exception& e) {
    throw ProviderError(std::string("malformed provider response: ") + e.what());
  }
}

std::vector<float> HttpProvider::embed_text(std::string_view text) {
  const json req = {{"text", std::string(text)}};
  return parse_vector_response(post_json("/embed/text", req.dump()));
}

bool HttpProvider::healthy() {
  httplib::Client client(options_.endpoint);
  client.set_connection_timeout(2, 0);
  auto res = client.Get("/health");
  if (!res || res->status != 200) return false;
  try {
    const json j = json::parse(res->body);
    return j.value("status", "") == "ok";
  } catch (const json::exception&) {
    return false;
  }
}

// --- Contract enforcement -----------------------------------------------------

void validate_embedding(std::span<const float> vector, std::size_t expected_dim) {
  if (vector.size() != expected_dim)
    throw ProviderError("dimension mismatch " + std::to_string(vector.size()) + "≠" +
                        std::to_string(expected_dim));
  for (float x : vector)
    if (!std::isfinite(x)) throw ProviderError("non-finite embedding");
}

StructuralEmbedding structural_embedding(FeatureProvider& provider, const SampledFrame& frame) {
  StructuralEmbedding e{provider.embed_image(frame), provider.id()};
  validate_embedding(e.vector, kStructuralDim);
  return e;
}

Caption caption_frame(FeatureProvider& provider, const SampledFrame& frame,
                      std::span<const std::string> keywords) {
  Caption c;
  try {
    c.raw = provider.caption(frame, kCaptionPrompt);
  } catch (const std::exception& e) {
    log::warning("caption failed for sample " + std::to_string(frame.sample_index) +
                 ", using fallback: " + e.what());
    c.raw.clear();
  }
  c.sanitized = sanitize_caption(c.raw, keywords);
  c.is_fallback = c.sanitized == kFallbackCaption;
  return c;
}

Caption caption_frame(FeatureProvider& provider, const SampledFrame& frame) {
  static const std::vector<std::string> keywords = default_refusal_keywords();
  return caption_frame(provider, frame, keywords);
}

SemanticEmbedding semantic_embedding(FeatureProvider& provider, const Caption& caption) {
  SemanticEmbedding e{provider.embed_text(caption.sanitized), provider.id()};
  validate_embedding(e.vector, kSemanticDim);
  return e;
}

// --- EmbeddingCache -----------------------------------------------------------

EmbeddingCache::EmbeddingCache(fs::path root) : root_(std::move(root)) {}

fs::path EmbeddingCache::table_stem(const std::string& video_id, std::string_view kind,
                                    const std::string& provider_id) const {
  return root_ / safe_component(video_id) /
         (std::string(kind) + "__" + safe_component(provider_id));
}

EmbeddingCache::Table& EmbeddingCache::load_table(const CacheKey& key) {
  const fs::path stem = table_stem(key.video_id, to_string(key.kind), key.provider_id);
  const std::string map_key = stem.string();
  auto it = tables_.find(map_key);
  if (it != tables_.end()) return it->second;

  Table table;
  const fs::path index_path = fs::path(map_key + ".json");
  if (fs::exists(index_path)) {
    std::ifstream in(index_path);
    json idx;
    try {
      in >> idx;
    } catch (const json::exception& e) {
      throw ProviderError("corrupt cache index " + index_path.string() + ": " + e.what());
    }
    table.dim = idx.at("dim").get<std::size_t>();
    for (const auto& [sample, row] : idx.at("rows").items())
      table.rows[std::stoll(sample)] = row.get<std::size_t>();
    table.data = read_f32_le(map_key + ".f32");
    if (table.data.size() < table.rows.size() * table.dim)
      throw ProviderError("corrupt cache data " + map_key + ".f32");
  }
  return tables_.emplace(map_key, std::move(table)).first->second;
}

std::optional<std::vector<float>> EmbeddingCache::get(const CacheKey& key) {
  auto lookup = [&](const Table& t) -> std::optional<std::vector<float>> {
    auto r = t.rows.find(key.sample_index);
    if (r == t.rows.end()) return std::nullopt;
    const auto begin = t.data.begin() + static_cast<std::ptrdiff_t>(r->second * t.dim);
    return std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(t.dim));
  };
  const std::string map_key = table_stem(key.video_id, to_string(key.kind), key.provider_id).string();
  {
    std::shared_lock lock(mutex_);
    auto it = tables_.find(map_key);
    if (it != tables_.end()) return lookup(it->second);
  }
  std::unique_lock lock(mutex_);
  return lookup(load_table(key));
}

void EmbeddingCache::put(const CacheKey& key, std::span<const float> vector) {
  std::unique_lock lock(mutex_);
  Table& t = load_table(key);
  if (t.rows.empty() && t.data.empty()) t.dim = vector.size();
  if (vector.size() != t.dim)
    throw ProviderError("cache dimension mismatch " + std::to_string(vector.size()) + "≠" +
                        std::to_string(t.dim));

  const fs::path stem = table_stem(key.video_id, to_string(key.kind), key.provider_id);
  fs::create_directories(stem.parent_path());
  const std::string data_path = stem.string() + ".f32";

  auto existing = t.rows.find(key.sample_index);
  if (existing != t.rows.end()) {
    std::copy(vector.begin(), vector.end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(existing->second * t.dim));
    std::ofstream out(data_path, std::ios::binary | std::ios::trunc);
    write_f32_le(out, t.data);
  } else {
    const std::size_t row = t.data.size() / std::max<std::size_t>(t.dim, 1);
    t.rows[key.sample_index] = row;
    t.data.insert(t.data.end(), vector.begin(), vector.end());
    std::ofstream out(data_path, std::ios::binary | std::ios::app);
    write_f32_le(out, vector);
  }

  json rows = json::object();
  for (const auto& [sample, row] : t.rows) rows[std::to_string(sample)] = row;
  const json idx = {{"dim", t.dim}, {"provider_id", key.provider_id}, {"rows", rows}};
  std::ofstream out(stem.string() + ".json", std::ios::trunc);
  out << idx.dump(2) << '\n';
}

EmbeddingCache::CaptionTable& EmbeddingCache::load_captions(const std::string& video_id,
                                                            const std::string& provider_id) {
  const std::string map_key = table_stem(video_id, "captions", provider_id).string();
  auto it = captions_.find(map_key);
  if (it != captions_.end()) return it->second;
  CaptionTable table;
  std::ifstream in(map_key + ".jsonl");
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      Caption c{j.at("raw").get<std::string>(), j.at("sanitized").get<std::string>(), false};
      c.is_fallback = c.sanitized == kFallbackCaption;
      table.entries[j.at("sample_index").get<std::int64_t>()] = std::move(c);
    } catch (const json::exception& e) {
      throw ProviderError("corrupt caption cache " + map_key + ".jsonl: " + e.what());
    }
  }
  return captions_.emplace(map_key, std::move(table)).first->second;
}

std::optional<Caption> EmbeddingCache::get_caption(const std::string& video_id,
                                                   std::int64_t sample_index,
                                                   const std::string& provider_id) {
  std::unique_lock lock(mutex_);
  const CaptionTable& t = load_captions(video_id, provider_id);
  auto it = t.entries.find(sample_index);
  if (it == t.entries.end()) return std::nullopt;
  return it->second;
}

void EmbeddingCache::put_caption(const std::string& video_id, std::int64_t sample_index,
                                 const std::string& provider_id, const Caption& caption) {
  std::unique_lock lock(mutex_);
  CaptionTable& t = load_captions(video_id, provider_id);
  t.entries[sample_index] = caption;
  const fs::path stem = table_stem(video_id, "captions", provider_id);
  fs::create_directories(stem.parent_path());
  std::ofstream out(stem.string() + ".jsonl", std::ios::app);
  const json j = {{"sample_index", sample_index}, {"raw", caption.raw}, {"sanitized", caption.sanitized}};
  out << j.dump() << '\n';
}

// --- FrameEmbedder ------------------------------------------------------------

FrameEmbedder::FrameEmbedder(FeatureProvider& provider, EmbeddingCache* cache,
                             EmbedderOptions options)
    : provider_(provider), cache_(cache), options_(std::move(options)) {}

FrameEmbeddings FrameEmbedder::embed(const SampledFrame& frame) {
  FrameEmbeddings out;
  const std::string pid = provider_.id();
  const CacheKey skey{frame.video_id, frame.sample_index, pid, EmbeddingKind::structural};
  const CacheKey tkey{frame.video_id, frame.sample_index, pid, EmbeddingKind::semantic};

  if (auto hit = cache_ ? cache_->get(skey) : std::nullopt) {
    validate_embedding(*hit, kStructuralDim);
    out.structural = {std::move(*hit), pid};
  } else {
    out.structural = structural_embedding(provider_, frame);
    if (cache_) cache_->put(skey, out.structural.vector);
  }

  if (auto hit = cache_ ? cache_->get_caption(frame.video_id, frame.sample_index, pid)
                        : std::nullopt) {
    out.caption = std::move(*hit);
  } else {
    out.caption = caption_frame(provider_, frame, options_.refusal_keywords);
    // A failed request leaves raw empty; only real answers are cached.
    if (cache_ && !out.caption.raw.empty())
      cache_->put_caption(frame.video_id, frame.sample_index, pid, out.caption);
  }

  if (auto hit = cache_ ? cache_->get(tkey) : std::nullopt) {
    validate_embedding(*hit, kSemanticDim);
    out.semantic = {std::move(*hit), pid};
  } else {
    out.semantic = semantic_embedding(provider_, out.caption);
    if (cache_) cache_->put(tkey, out.semantic.vector);
  }
  return out;
}

std::vector<FrameEmbeddings> FrameEmbedder::embed_all(std::span<const SampledFrame> frames) {
  std::vector<FrameEmbeddings> out(frames.size());
  parallel_for(frames.size(), options_.max_in_flight,
               [&](std::size_t i) { out[i] = embed(frames[i]); });
  return out;
}

// --- base64 -------------------------------------------------------------------

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  static constexpr char kAlphabet[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    std::uint32_t v = bytes[i] << 16;
    if (i + 1 < bytes.size()) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  std::uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || std::isspace(static_cast<unsigned char>(c))) continue;
    const int v = value(c);
    if (v < 0) throw std::invalid_argument("invalid base64 input");
    acc = (acc << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

}  // namespace tkf
