#include "tkf/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tkf/cv_bridge.hpp"
#include "tkf/fusion.hpp"
#include "tkf/imageio.hpp"
#include "tkf/ingest.hpp"
#include "tkf/log.hpp"
#include "tkf/parallel.hpp"
#include "tkf/perceptual.hpp"
#include "tkf/providers.hpp"

namespace tkf {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kColorDumpName = "features_color";
constexpr const char* kEmbeddingDumpName = "embeddings";
constexpr const char* kClusterReportName = "cluster_report.json";

std::string read_text(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(std::string("cannot read ") + what + ": " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

void write_f32_le(const fs::path& path, const Matrix& m) {
  std::vector<char> buf(static_cast<std::size_t>(m.size()) * 4);
  std::size_t o = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(m(r, c)));
      for (int b = 0; b < 4; ++b) buf[o++] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out.flush()) throw std::runtime_error("write failed: " + path.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string keyframe_name(std::int64_t sample_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "kf_%06lld.png", static_cast<long long>(sample_index));
  return buf;
}

std::string format_seconds(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2fs", t);
  return buf;
}

// ---- strict JSON field readers ----------------------------------------------

[[noreturn]] void bad_field(const std::string& path, const char* expected) {
  throw ConfigError("\"" + path + "\" must be " + expected);
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError((where.empty() ? std::string("config") : "\"" + where + "\"") + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    const bool ok = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!ok) throw ConfigError("unknown config key \"" + (where.empty() ? key : where + "." + key) + "\"");
  }
}

void read(const json& obj, const char* key, double& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number()) bad_field(where + key, "a number");
  out = it->get<double>();
}

void read(const json& obj, const char* key, int& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_number_integer()) bad_field(where + key, "an integer");
  out = it->get<int>();
}

void read(const json& obj, const char* key, bool& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_boolean()) bad_field(where + key, "a boolean");
  out = it->get<bool>();
}

void read(const json& obj, const char* key, std::string& out, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  if (!it->is_string()) bad_field(where + key, "a string");
  out = it->get<std::string>();
}

json params_to_json(const ClusterParams& p) {
  return {{"min_cluster_size", p.min_cluster_size}, {"min_samples", p.min_samples}};
}

ClusterParams params_from_json(const json& j, const std::string& where) {
  check_keys(j, {"min_cluster_size", "min_samples"}, where);
  ClusterParams p;
  read(j, "min_cluster_size", p.min_cluster_size, where + ".");
  read(j, "min_samples", p.min_samples, where + ".");
  return p;
}

json config_json(const PipelineConfig& c) {
  const auto& p = c.providers;
  const auto& q = c.quality;
  json grid = json::array();
  for (const auto& g : c.cluster_grid) grid.push_back(params_to_json(g));
  return {
      {"sampling_rate", c.sampling_rate},
      {"providers",
       {{"mode", to_string(p.mode)},
        {"endpoint", p.endpoint},
        {"provider_id", p.provider_id},
        {"cache_dir", p.cache_dir},
        {"retry_attempts", p.retry_attempts},
        {"retry_backoff_ms", p.retry_backoff_ms},
        {"timeout_ms", p.timeout_ms},
        {"max_in_flight", p.max_in_flight}}},
      {"fusion_k", c.fusion_k},
      {"cluster_grid", grid},
      {"quality",
       {{"low_light_mean", q.low_light_mean},
        {"low_light_var", q.low_light_var},
        {"blur_laplacian_var", q.blur_laplacian_var},
        {"blur_edge_density", q.blur_edge_density},
        {"uniform_peak_mass", q.uniform_peak_mass},
        {"saliency_min", q.saliency_min},
        {"saliency_max", q.saliency_max}}},
      {"dedup_threshold", c.dedup_threshold},
      {"eval_tau", c.eval_tau},
      {"output_dir", c.output_dir},
      {"workers", c.workers},
      {"write_dumps", c.write_dumps},
  };
}

PipelineConfig config_from(const json& doc) {
  check_keys(doc, {"sampling_rate", "providers", "fusion_k", "cluster_grid", "quality", "dedup_threshold",
                   "eval_tau", "output_dir", "workers", "write_dumps"},
             "");
  PipelineConfig c;
  read(doc, "sampling_rate", c.sampling_rate, "");
  read(doc, "fusion_k", c.fusion_k, "");
  read(doc, "dedup_threshold", c.dedup_threshold, "");
  read(doc, "eval_tau", c.eval_tau, "");
  read(doc, "output_dir", c.output_dir, "");
  read(doc, "workers", c.workers, "");
  read(doc, "write_dumps", c.write_dumps, "");
  if (auto it = doc.find("providers"); it != doc.end()) {
    const json& pj = *it;
    check_keys(pj, {"mode", "endpoint", "provider_id", "cache_dir", "retry_attempts", "retry_backoff_ms",
                    "timeout_ms", "max_in_flight"},
               "providers");
    auto& p = c.providers;
    std::string mode = to_string(p.mode);
    read(pj, "mode", mode, "providers.");
    p.mode = provider_mode_from_string(mode);
    read(pj, "endpoint", p.endpoint, "providers.");
    read(pj, "provider_id", p.provider_id, "providers.");
    read(pj, "cache_dir", p.cache_dir, "providers.");
    read(pj, "retry_attempts", p.retry_attempts, "providers.");
    read(pj, "retry_backoff_ms", p.retry_backoff_ms, "providers.");
    read(pj, "timeout_ms", p.timeout_ms, "providers.");
    read(pj, "max_in_flight", p.max_in_flight, "providers.");
  }
  if (auto it = doc.find("cluster_grid"); it != doc.end()) {
    if (!it->is_array()) bad_field("cluster_grid", "an array");
    for (std::size_t i = 0; i < it->size(); ++i)
      c.cluster_grid.push_back(params_from_json((*it)[i], "cluster_grid[" + std::to_string(i) + "]"));
  }
  if (auto it = doc.find("quality"); it != doc.end()) {
    const json& qj = *it;
    check_keys(qj, {"low_light_mean", "low_light_var", "blur_laplacian_var", "blur_edge_density",
                    "uniform_peak_mass", "saliency_min", "saliency_max"},
               "quality");
    auto& q = c.quality;
    read(qj, "low_light_mean", q.low_light_mean, "quality.");
    read(qj, "low_light_var", q.low_light_var, "quality.");
    read(qj, "blur_laplacian_var", q.blur_laplacian_var, "quality.");
    read(qj, "blur_edge_density", q.blur_edge_density, "quality.");
    read(qj, "uniform_peak_mass", q.uniform_peak_mass, "quality.");
    read(qj, "saliency_min", q.saliency_min, "quality.");
    read(qj, "saliency_max", q.saliency_max, "quality.");
  }
  return c;
}

// ---- manifest pieces ---------------------------------------------------------

json quality_json(const QualityReport& r) {
  return {{"sample_index", r.sample_index},   {"mean_gray", r.mean_gray},
          {"var_gray", r.var_gray},           {"laplacian_var", r.laplacian_var},
          {"edge_density", r.edge_density},   {"hist_peak_mass", r.hist_peak_mass},
          {"saliency_ratio", r.saliency_ratio}, {"has_text", r.has_text},
          {"keep", r.keep},                   {"drop_reason", std::string(to_string(r.drop_reason))}};
}

DropReason drop_reason_from_string(const std::string& s) {
  for (DropReason r : {DropReason::none, DropReason::low_light, DropReason::blurry, DropReason::uniform,
                       DropReason::non_salient})
    if (to_string(r) == s) return r;
  throw std::runtime_error("unknown drop reason \"" + s + "\"");
}

QualityReport quality_from(const json& j) {
  QualityReport r;
  r.sample_index = j.at("sample_index").get<std::int64_t>();
  r.mean_gray = j.at("mean_gray").get<double>();
  r.var_gray = j.at("var_gray").get<double>();
  r.laplacian_var = j.at("laplacian_var").get<double>();
  r.edge_density = j.at("edge_density").get<double>();
  r.hist_peak_mass = j.at("hist_peak_mass").get<double>();
  r.saliency_ratio = j.at("saliency_ratio").get<double>();
  r.has_text = j.at("has_text").get<bool>();
  r.keep = j.at("keep").get<bool>();
  r.drop_reason = drop_reason_from_string(j.at("drop_reason").get<std::string>());
  return r;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// ---- providers ---------------------------------------------------------------

std::unique_ptr<FeatureProvider> make_provider(const ProviderConfig& p) {
  const std::string id = p.provider_id.empty() ? "sidecar@" + p.endpoint : p.provider_id;
  switch (p.mode) {
    case ProviderMode::stub:
      return std::make_unique<StubProvider>();
    case ProviderMode::remote: {
      HttpProviderOptions o;
      o.endpoint = p.endpoint;
      o.provider_id = p.provider_id;
      o.retry.attempts = p.retry_attempts;
      o.retry.initial_backoff = std::chrono::milliseconds(p.retry_backoff_ms);
      o.timeout = std::chrono::milliseconds(p.timeout_ms);
      return std::make_unique<HttpProvider>(std::move(o));
    }
    case ProviderMode::cache_only:
      if (p.cache_dir.empty()) throw ProviderError("cache-only mode needs providers.cache_dir");
      return std::make_unique<CacheOnlyProvider>(id);
  }
  throw ProviderError("unknown provider mode");
}

// ---- output bookkeeping --------------------------------------------------------

/// Files written by this run. Unless committed, they are deleted on scope exit,
/// and the directory too when this run created it.
class OutputGuard {
 public:
  explicit OutputGuard(fs::path dir) : dir_(std::move(dir)) {
    created_dir_ = !fs::exists(dir_);
    fs::create_directories(dir_);
  }
  OutputGuard(const OutputGuard&) = delete;
  OutputGuard& operator=(const OutputGuard&) = delete;
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    if (created_dir_) {
      fs::remove_all(dir_, ec);
      return;
    }
    for (const auto& f : files_) fs::remove(f, ec);
  }

  fs::path track(const std::string& name) {
    fs::path p = dir_ / name;
    files_.push_back(p);
    return p;
  }
  void commit() { committed_ = true; }

 private:
  fs::path dir_;
  bool created_dir_ = false;
  bool committed_ = false;
  std::vector<fs::path> files_;
};

// Outputs of an earlier run that this run would otherwise leave stale.
void remove_previous_artifacts(const fs::path& dir) {
  if (!fs::is_directory(dir)) return;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const bool keyframe = name.size() == 13 && name.rfind("kf_", 0) == 0 && entry.path().extension() == ".png";
    const bool ours = keyframe || name == kManifestName || name == kContactSheetName ||
                      name == kClusterReportName || name.rfind(std::string(kColorDumpName) + ".", 0) == 0 ||
                      name.rfind(std::string(kEmbeddingDumpName) + ".", 0) == 0;
    if (ours && entry.is_regular_file()) fs::remove(entry.path(), ec);
  }
}

void write_contact_sheet(const fs::path& path, const std::vector<const SampledFrame*>& frames,
                         const std::vector<ManifestKeyframe>& keyframes) {
  constexpr int kThumbWidth = 240;
  constexpr int kLabelHeight = 22;
  constexpr int kPad = 4;
  const cv::Scalar background(32, 32, 32);
  if (frames.empty()) {
    cv::Mat sheet(kThumbWidth / 2, kThumbWidth, CV_8UC3, background);
    cv::putText(sheet, "no keyframes", cv::Point(kPad * 2, sheet.rows / 2), cv::FONT_HERSHEY_SIMPLEX, 0.5,
                cv::Scalar(220, 220, 220), 1, cv::LINE_8);
    if (!cv::imwrite(path.string(), sheet)) throw std::runtime_error("cannot write " + path.string());
    return;
  }
  const int src_w = frames.front()->pixels.width();
  const int src_h = frames.front()->pixels.height();
  const int thumb_h = std::max(1, static_cast<int>(std::lround(static_cast<double>(kThumbWidth) * src_h / src_w)));
  const int n = static_cast<int>(frames.size());
  const int cols = std::min(n, 4);
  const int rows = (n + cols - 1) / cols;
  const int cell_w = kThumbWidth + kPad;
  const int cell_h = thumb_h + kLabelHeight + kPad;
  cv::Mat sheet(rows * cell_h + kPad, cols * cell_w + kPad, CV_8UC3, background);
  for (int i = 0; i < n; ++i) {
    const int x = kPad + (i % cols) * cell_w;
    const int y = kPad + (i / cols) * cell_h;
    cv::Mat thumb;
    cv::resize(to_bgr_mat(frames[i]->pixels), thumb, cv::Size(kThumbWidth, thumb_h), 0, 0, cv::INTER_AREA);
    thumb.copyTo(sheet(cv::Rect(x, y, kThumbWidth, thumb_h)));
    const auto& kf = keyframes[static_cast<std::size_t>(i)];
    const std::string label = "#" + std::to_string(kf.sample_index) + "  t=" + format_seconds(kf.timestamp) +
                              "  c" + std::to_string(kf.cluster);
    cv::putText(sheet, label, cv::Point(x + 2, y + thumb_h + kLabelHeight - 6), cv::FONT_HERSHEY_SIMPLEX, 0.45,
                cv::Scalar(230, 230, 230), 1, cv::LINE_8);
  }
  if (!cv::imwrite(path.string(), sheet)) throw std::runtime_error("cannot write " + path.string());
}

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

}  // namespace

std::string to_string(ProviderMode mode) {
  switch (mode) {
    case ProviderMode::stub: return "stub";
    case ProviderMode::remote: return "remote";
    case ProviderMode::cache_only: return "cache-only";
  }
  return "remote";
}

ProviderMode provider_mode_from_string(const std::string& text) {
  if (text == "stub") return ProviderMode::stub;
  if (text == "remote") return ProviderMode::remote;
  if (text == "cache-only") return ProviderMode::cache_only;
  throw ConfigError("unknown provider mode \"" + text + "\" (expected remote, cache-only or stub)");
}

void validate_config(const PipelineConfig& c) {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(std::isfinite(c.sampling_rate) && c.sampling_rate > 0.0, "sampling_rate must be positive");
  require(c.fusion_k >= 1, "fusion_k must be at least 1");
  for (const auto& g : c.cluster_grid)
    require(g.min_cluster_size >= 2 && g.min_samples >= 1,
            "cluster_grid entries need min_cluster_size >= 2 and min_samples >= 1");
  require(c.dedup_threshold >= -1.0 && c.dedup_threshold <= 1.0, "dedup_threshold must lie in [-1, 1]");
  require(std::isfinite(c.eval_tau) && c.eval_tau >= 0.0, "eval_tau must be non-negative");
  require(!c.output_dir.empty(), "output_dir must not be empty");
  require(c.workers >= 1, "workers must be at least 1");
  const auto& p = c.providers;
  require(p.retry_attempts >= 1, "providers.retry_attempts must be at least 1");
  require(p.retry_backoff_ms >= 0, "providers.retry_backoff_ms must be non-negative");
  require(p.timeout_ms > 0, "providers.timeout_ms must be positive");
  require(p.max_in_flight >= 1, "providers.max_in_flight must be at least 1");
  require(p.mode != ProviderMode::remote || !p.endpoint.empty(), "providers.endpoint must not be empty");
  const auto& q = c.quality;
  for (double v : {q.low_light_mean, q.low_light_var, q.blur_laplacian_var, q.blur_edge_density,
                   q.uniform_peak_mass, q.saliency_min, q.saliency_max})
    require(std::isfinite(v), "quality thresholds must be finite");
  require(q.saliency_min <= q.saliency_max, "quality.saliency_min must not exceed quality.saliency_max");
}

std::string config_to_json(const PipelineConfig& config) { return dump(config_json(config)); }

PipelineConfig config_from_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from(doc);
}

PipelineConfig load_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text(path, "config");
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  try {
    return config_from_json(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void apply_env_overrides(PipelineConfig& config) {
  if (const char* url = std::getenv(kProviderUrlEnv); url != nullptr && *url != '\0')
    config.providers.endpoint = url;
}

// ---- manifest --------------------------------------------------------------------

std::string manifest_to_json(const SummaryManifest& m) {
  json keyframes = json::array();
  for (const auto& k : m.keyframes)
    keyframes.push_back({{"sample_index", k.sample_index},
                         {"source_index", k.source_index},
                         {"timestamp", k.timestamp},
                         {"cluster", k.cluster},
                         {"caption", k.caption},
                         {"caption_is_fallback", k.caption_is_fallback},
                         {"image", k.image},
                         {"quality", quality_json(k.quality)}});
  json drops = json::array();
  for (const auto& d : m.drops)
    drops.push_back({{"sample_index", d.sample_index}, {"stage", d.stage}, {"reason", d.reason}});
  json reports = json::array();
  for (const auto& r : m.quality_reports) reports.push_back(quality_json(r));
  json decisions = json::array();
  for (const auto& d : m.dedup_decisions)
    decisions.push_back({{"kept", d.kept}, {"dropped", d.dropped}, {"ssim", d.ssim}});
  const json doc = {
      {"video_id", m.video_id},
      {"source_path", m.source_path},
      {"fps", m.fps},
      {"n_source_frames", m.n_source_frames},
      {"config", config_json(m.config)},
      {"counts",
       {{"sampled", m.counts.sampled},
        {"clustered", m.counts.clustered},
        {"medoids", m.counts.medoids},
        {"quality_kept", m.counts.quality_kept},
        {"deduped", m.counts.deduped}}},
      {"effective_k", m.effective_k},
      {"cluster_params", m.cluster_params ? params_to_json(*m.cluster_params) : json(nullptr)},
      {"dbcv", optional_number(m.dbcv)},
      {"cluster_selection", m.cluster_selection},
      {"n_clusters", m.n_clusters},
      {"keyframes", keyframes},
      {"drops", drops},
      {"quality_reports", reports},
      {"dedup_decisions", decisions},
      {"providers", {{"structural", m.structural_provider}, {"semantic", m.semantic_provider}}},
      {"contact_sheet", m.contact_sheet},
      {"generated_at", m.generated_at},
  };
  return dump(doc);
}

SummaryManifest manifest_from_json(const std::string& json_text) {
  SummaryManifest m;
  try {
    const json doc = json::parse(json_text);
    m.video_id = doc.at("video_id").get<std::string>();
    m.source_path = doc.at("source_path").get<std::string>();
    m.fps = doc.at("fps").get<double>();
    m.n_source_frames = doc.at("n_source_frames").get<std::int64_t>();
    m.config = config_from(doc.at("config"));
    const json& c = doc.at("counts");
    m.counts = {c.at("sampled").get<std::int64_t>(), c.at("clustered").get<std::int64_t>(),
                c.at("medoids").get<std::int64_t>(), c.at("quality_kept").get<std::int64_t>(),
                c.at("deduped").get<std::int64_t>()};
    m.effective_k = doc.at("effective_k").get<int>();
    if (!doc.at("cluster_params").is_null()) m.cluster_params = params_from_json(doc.at("cluster_params"), "cluster_params");
    if (!doc.at("dbcv").is_null()) m.dbcv = doc.at("dbcv").get<double>();
    m.cluster_selection = doc.at("cluster_selection").get<std::string>();
    m.n_clusters = doc.at("n_clusters").get<int>();
    for (const auto& k : doc.at("keyframes")) {
      ManifestKeyframe kf;
      kf.sample_index = k.at("sample_index").get<std::int64_t>();
      kf.source_index = k.at("source_index").get<std::int64_t>();
      kf.timestamp = k.at("timestamp").get<double>();
      kf.cluster = k.at("cluster").get<int>();
      kf.caption = k.at("caption").get<std::string>();
      kf.caption_is_fallback = k.at("caption_is_fallback").get<bool>();
      kf.image = k.at("image").get<std::string>();
      kf.quality = quality_from(k.at("quality"));
      m.keyframes.push_back(std::move(kf));
    }
    for (const auto& d : doc.at("drops"))
      m.drops.push_back({d.at("sample_index").get<std::int64_t>(), d.at("stage").get<std::string>(),
                         d.at("reason").get<std::string>()});
    for (const auto& r : doc.at("quality_reports")) m.quality_reports.push_back(quality_from(r));
    for (const auto& d : doc.at("dedup_decisions"))
      m.dedup_decisions.push_back(
          {d.at("kept").get<std::int64_t>(), d.at("dropped").get<std::int64_t>(), d.at("ssim").get<double>()});
    m.structural_provider = doc.at("providers").at("structural").get<std::string>();
    m.semantic_provider = doc.at("providers").at("semantic").get<std::string>();
    m.contact_sheet = doc.at("contact_sheet").get<std::string>();
    m.generated_at = doc.at("generated_at").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed manifest: ") + e.what());
  }
  return m;
}

SummaryManifest load_manifest(const fs::path& path) {
  try {
    return manifest_from_json(read_text(path, "manifest"));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

// ---- extract ---------------------------------------------------------------------

SummaryManifest run_extract(const PipelineConfig& config, const fs::path& video_path) {
  in_stage("config", [&] { validate_config(config); });
  const int workers = config.workers;

  // ingest
  const VideoMeta meta = in_stage("ingest", [&] { return open_video(video_path); });
  const std::vector<SampledFrame> frames = in_stage("ingest", [&] {
    auto f = sample_frames(meta, config.sampling_rate);
    if (f.empty()) throw IngestError("no frames sampled from " + video_path.string());
    return f;
  });
  const auto n = static_cast<Eigen::Index>(frames.size());
  log::info("ingest: " + std::to_string(n) + " frames sampled from " + meta.video_id);

  // perceptual
  const Matrix color = in_stage("perceptual", [&] {
    Matrix m(n, static_cast<Eigen::Index>(kColorFeatureDim));
    parallel_for(frames.size(), workers, [&](std::size_t i) {
      const auto v = color_feature(frames[i].pixels).vector();
      for (std::size_t j = 0; j < v.size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
    });
    return m;
  });

  // providers
  std::string provider_id;
  const std::vector<FrameEmbeddings> embeddings = in_stage("providers", [&] {
    auto provider = make_provider(config.providers);
    std::unique_ptr<EmbeddingCache> cache;
    if (!config.providers.cache_dir.empty()) cache = std::make_unique<EmbeddingCache>(config.providers.cache_dir);
    EmbedderOptions opts;
    opts.max_in_flight = config.providers.max_in_flight;
    FrameEmbedder embedder(*provider, cache.get(), opts);
    provider_id = provider->id();
    return embedder.embed_all(frames);
  });

  // fusion
  const FusionResult fused = in_stage("fusion", [&] {
    ModalFeatures mf;
    mf.color = color;
    mf.structural.resize(n, static_cast<Eigen::Index>(kStructuralDim));
    mf.semantic.resize(n, static_cast<Eigen::Index>(kSemanticDim));
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& e = embeddings[static_cast<std::size_t>(i)];
      mf.sample_indices.push_back(frames[static_cast<std::size_t>(i)].sample_index);
      for (Eigen::Index j = 0; j < mf.structural.cols(); ++j) mf.structural(i, j) = e.structural.vector[static_cast<std::size_t>(j)];
      for (Eigen::Index j = 0; j < mf.semantic.cols(); ++j) mf.semantic(i, j) = e.semantic.vector[static_cast<std::size_t>(j)];
    }
    return fuse(mf, config.fusion_k);
  });

  // cluster
  const ClusterSolution solution = in_stage("cluster", [&] {
    const auto grid = config.cluster_grid.empty() ? default_grid(n) : config.cluster_grid;
    return grid_search(fused.embedding_matrix, grid, workers);
  });
  log::info("cluster: " + std::to_string(solution.n_clusters()) + " clusters (" + solution.selection + ")");

  // refine
  struct Candidate {
    std::size_t row;
    int cluster;
  };
  std::vector<Candidate> candidates;
  for (const auto& [label, row] : solution.medoid_indices) candidates.push_back({static_cast<std::size_t>(row), label});
  std::sort(candidates.begin(), candidates.end(), [&](const Candidate& a, const Candidate& b) {
    return frames[a.row].sample_index < frames[b.row].sample_index;
  });
  std::vector<QualityReport> reports(candidates.size());
  std::vector<GrayImage> grays(candidates.size());
  const DedupResult deduped = in_stage("refine", [&] {
    parallel_for(candidates.size(), workers, [&](std::size_t i) {
      const SampledFrame& f = frames[candidates[i].row];
      grays[i] = to_grayscale(f.pixels);
      reports[i] = quality_gate(grays[i], f.sample_index, config.quality);
    });
    std::vector<DedupItem> items;
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (reports[i].keep)
        items.push_back({frames[candidates[i].row].sample_index, grays[i], reports[i].laplacian_var});
    return dedup(items, config.dedup_threshold);
  });

  SummaryManifest m;
  m.video_id = meta.video_id;
  m.source_path = video_path.string();
  m.fps = meta.fps;
  m.n_source_frames = meta.n_source_frames;
  m.config = config;
  m.counts.sampled = n;
  m.counts.clustered = n - solution.n_noise();
  m.counts.medoids = static_cast<std::int64_t>(candidates.size());
  m.counts.quality_kept = std::count_if(reports.begin(), reports.end(), [](const auto& r) { return r.keep; });
  m.counts.deduped = static_cast<std::int64_t>(deduped.kept.size());
  m.effective_k = fused.effective_k;
  m.cluster_params = solution.params;
  m.dbcv = solution.dbcv;
  m.cluster_selection = solution.selection;
  m.n_clusters = solution.n_clusters();
  m.quality_reports = reports;
  m.dedup_decisions = deduped.decisions;
  m.structural_provider = embeddings.empty() ? provider_id : embeddings.front().structural.provider_id;
  m.semantic_provider = embeddings.empty() ? provider_id : embeddings.front().semantic.provider_id;
  m.contact_sheet = kContactSheetName;

  const std::set<std::int64_t> kept(deduped.kept.begin(), deduped.kept.end());
  std::vector<const SampledFrame*> kept_frames;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const SampledFrame& f = frames[candidates[i].row];
    if (!reports[i].keep) {
      m.drops.push_back({f.sample_index, "quality", std::string(to_string(reports[i].drop_reason))});
      continue;
    }
    if (!kept.contains(f.sample_index)) continue;
    const auto& e = embeddings[candidates[i].row];
    m.keyframes.push_back({f.sample_index, f.source_index, f.timestamp, candidates[i].cluster, e.caption.sanitized,
                           e.caption.is_fallback, keyframe_name(f.sample_index), reports[i]});
    kept_frames.push_back(&f);
  }
  for (const auto& d : deduped.decisions) m.drops.push_back({d.dropped, "dedup", "near_duplicate"});
  std::stable_sort(m.drops.begin(), m.drops.end(),
                   [](const ManifestDrop& a, const ManifestDrop& b) { return a.sample_index < b.sample_index; });

  // output
  in_stage("output", [&] {
    const fs::path dir = config.output_dir;
    remove_previous_artifacts(dir);
    OutputGuard guard(dir);
    for (std::size_t i = 0; i < kept_frames.size(); ++i)
      write_png(guard.track(m.keyframes[i].image), kept_frames[i]->pixels);
    write_contact_sheet(guard.track(kContactSheetName), kept_frames, m.keyframes);
    if (config.write_dumps) {
      json rows = json::object();
      for (std::size_t i = 0; i < frames.size(); ++i) rows[std::to_string(frames[i].sample_index)] = i;
      write_f32_le(guard.track(std::string(kColorDumpName) + ".f32"), color);
      write_text(guard.track(std::string(kColorDumpName) + ".json"),
                 dump({{"dim", kColorFeatureDim}, {"n", n}, {"video_id", m.video_id}, {"rows", rows}}));
      write_f32_le(guard.track(std::string(kEmbeddingDumpName) + ".f32"), fused.embedding_matrix);
      write_text(guard.track(std::string(kEmbeddingDumpName) + ".json"),
                 dump({{"n", n}, {"k", fused.effective_k}, {"video_id", m.video_id}}));
      json grid = json::array();
      for (const auto& g : solution.grid)
        grid.push_back({{"params", params_to_json(g.params)},
                        {"dbcv", optional_number(g.dbcv)},
                        {"skip_reason", g.skip_reason},
                        {"n_clusters", g.n_clusters},
                        {"n_noise", g.n_noise}});
      json labels = json::object();
      for (std::size_t i = 0; i < frames.size(); ++i) labels[std::to_string(frames[i].sample_index)] = solution.labels[i];
      write_text(guard.track(kClusterReportName),
                 dump({{"grid", grid}, {"selection", solution.selection}, {"labels", labels}}));
    }
    m.generated_at = utc_now();
    // Written last under a temporary name so a reader never sees a partial manifest.
    const fs::path tmp = guard.track(std::string(kManifestName) + ".tmp");
    write_text(tmp, manifest_to_json(m));
    fs::rename(tmp, guard.track(kManifestName));
    guard.commit();
  });
  log::info("output: " + std::to_string(m.keyframes.size()) + " keyframes written to " + config.output_dir);
  return m;
}

// ---- eval ------------------------------------------------------------------------

EvalReport run_eval(const fs::path& manifests_dir, const fs::path& ground_truth_dir, double tau_seconds) {
  if (!fs::is_directory(manifests_dir)) throw EvalError("manifest directory not found: " + manifests_dir.string());
  if (!fs::is_directory(ground_truth_dir))
    throw EvalError("ground-truth directory not found: " + ground_truth_dir.string());
  std::vector<fs::path> paths;
  for (const auto& entry : fs::recursive_directory_iterator(manifests_dir))
    if (entry.is_regular_file() && entry.path().filename() == kManifestName) paths.push_back(entry.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw EvalError("no " + std::string(kManifestName) + " under " + manifests_dir.string());

  std::map<std::string, VideoScore> scores;
  for (const auto& path : paths) {
    SummaryManifest m;
    try {
      m = load_manifest(path);
    } catch (const std::exception& e) {
      throw EvalError(e.what());
    }
    if (scores.contains(m.video_id))
      throw EvalError("video_id \"" + m.video_id + "\" appears in more than one manifest");
    const fs::path gt_path = ground_truth_dir / (m.video_id + ".json");
    if (!fs::exists(gt_path))
      throw EvalError("missing ground truth for video_id \"" + m.video_id + "\" (expected " + gt_path.string() + ")");
    const GroundTruth gt = load_ground_truth(gt_path);
    std::vector<std::int64_t> pred;
    for (const auto& k : m.keyframes) pred.push_back(k.source_index);
    scores[m.video_id] = f1_for_video(pred, gt, tau_seconds);
  }
  return aggregate(scores, tau_seconds);
}

// ---- inspect ---------------------------------------------------------------------

std::string inspect_manifest(const SummaryManifest& m) {
  std::ostringstream out;
  char buf[256];
  out << "video:      " << m.video_id << "  (" << m.source_path << ")\n";
  std::snprintf(buf, sizeof buf, "source:     %lld frames at %.3f fps\n", static_cast<long long>(m.n_source_frames), m.fps);
  out << buf;
  out << "providers:  structural=" << m.structural_provider << " semantic=" << m.semantic_provider << "\n";
  out << "counts:     sampled " << m.counts.sampled << " -> clustered " << m.counts.clustered << " -> medoids "
      << m.counts.medoids << " -> quality " << m.counts.quality_kept << " -> dedup " << m.counts.deduped << "\n";
  out << "fusion k:   " << m.effective_k << "\n";
  out << "clusters:   " << m.n_clusters << "  selection: " << m.cluster_selection;
  if (m.cluster_params)
    out << "  (min_cluster_size=" << m.cluster_params->min_cluster_size
        << ", min_samples=" << m.cluster_params->min_samples << ")";
  if (m.dbcv) {
    std::snprintf(buf, sizeof buf, "  dbcv=%.4f", *m.dbcv);
    out << buf;
  }
  out << "\n\nkeyframes (" << m.keyframes.size() << "):\n";
  for (const auto& k : m.keyframes) {
    std::snprintf(buf, sizeof buf, "  #%-5lld src %-7lld %9s  cluster %-3d %s", static_cast<long long>(k.sample_index),
                  static_cast<long long>(k.source_index), format_seconds(k.timestamp).c_str(), k.cluster,
                  k.image.c_str());
    out << buf << "  \"" << k.caption << "\"" << (k.caption_is_fallback ? " (fallback)" : "") << "\n";
  }
  out << "\ndrops (" << m.drops.size() << "):\n";
  for (const auto& d : m.drops) out << "  #" << d.sample_index << "  " << d.stage << ": " << d.reason << "\n";
  out << "\ncontact sheet: " << m.contact_sheet << "\n";
  out << "generated at:  " << m.generated_at << "\n";
  return out.str();
}

}  // namespace tkf
