#include "tkf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <tuple>

#include <nlohmann/json.hpp>

namespace tkf {
namespace {

using nlohmann::json;

std::vector<std::int64_t> sorted_unique(std::vector<std::int64_t> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

GroundTruth parse_ground_truth(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw EvalError(std::string("ground truth is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw EvalError("ground truth must be a JSON object");
  auto require = [&](const char* key) -> const json& {
    if (!doc.contains(key)) throw EvalError(std::string("ground truth missing \"") + key + "\"");
    return doc.at(key);
  };
  GroundTruth gt;
  const json& id = require("video_id");
  if (!id.is_string()) throw EvalError("\"video_id\" must be a string");
  gt.video_id = id.get<std::string>();
  const json& fps = require("fps");
  if (!fps.is_number() || !(fps.get<double>() > 0.0)) throw EvalError("\"fps\" must be a positive number");
  gt.fps = fps.get<double>();
  const json& n = require("n_frames");
  if (!n.is_number_integer() || n.get<std::int64_t>() < 0) throw EvalError("\"n_frames\" must be a non-negative integer");
  gt.n_frames = n.get<std::int64_t>();
  const json& ann = require("annotators");
  if (!ann.is_array()) throw EvalError("\"annotators\" must be an array");
  if (ann.empty()) throw EvalError("ground truth needs at least one annotator");
  for (const auto& a : ann) {
    if (!a.is_array()) throw EvalError("each annotator must be an array of frame indices");
    std::vector<std::int64_t> frames;
    for (const auto& f : a) {
      if (!f.is_number_integer()) throw EvalError("frame indices must be integers");
      const auto idx = f.get<std::int64_t>();
      if (idx < 0 || idx >= gt.n_frames)
        throw EvalError("frame index " + std::to_string(idx) + " outside [0, " + std::to_string(gt.n_frames) + ")");
      frames.push_back(idx);
    }
    gt.annotators.push_back(sorted_unique(std::move(frames)));
  }
  return gt;
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EvalError("cannot read ground truth: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_ground_truth(ss.str());
  } catch (const EvalError& e) {
    throw EvalError(path.string() + ": " + e.what());
  }
}

std::size_t match_keyframes(const std::vector<std::int64_t>& pred_in, const std::vector<std::int64_t>& gt_in,
                            std::int64_t tau_frames) {
  if (tau_frames < 0) throw EvalError("tau_frames must be non-negative");
  const auto pred = sorted_unique(pred_in);
  const auto gt = sorted_unique(gt_in);
  std::vector<std::tuple<std::int64_t, std::int64_t, std::int64_t, std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    auto lo = std::lower_bound(gt.begin(), gt.end(), pred[i] - tau_frames);
    for (auto it = lo; it != gt.end() && *it <= pred[i] + tau_frames; ++it)
      pairs.emplace_back(std::llabs(pred[i] - *it), pred[i], *it, i, static_cast<std::size_t>(it - gt.begin()));
  }
  std::sort(pairs.begin(), pairs.end());
  std::vector<char> used_p(pred.size(), 0), used_g(gt.size(), 0);
  std::size_t count = 0;
  for (const auto& [d, p, g, i, j] : pairs) {
    if (used_p[i] || used_g[j]) continue;
    used_p[i] = used_g[j] = 1;
    ++count;
  }
  return count;
}

VideoScore f1_for_video(const std::vector<std::int64_t>& pred_in, const GroundTruth& gt, double tau_seconds) {
  if (gt.annotators.empty()) throw EvalError("ground truth has no annotators");
  if (tau_seconds < 0.0) throw EvalError("tau must be non-negative");
  const auto pred = sorted_unique(pred_in);
  const auto tau_frames = static_cast<std::int64_t>(std::llround(tau_seconds * gt.fps));
  VideoScore total;
  for (const auto& a : gt.annotators) {
    double p = 0.0, r = 0.0, f = 0.0;
    if (a.empty()) {
      if (pred.empty()) p = r = f = 1.0;
    } else if (!pred.empty()) {
      const double m = static_cast<double>(match_keyframes(pred, a, tau_frames));
      p = m / static_cast<double>(pred.size());
      r = m / static_cast<double>(a.size());
      f = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    total.precision += p;
    total.recall += r;
    total.f1 += f;
  }
  const double k = static_cast<double>(gt.annotators.size());
  total.precision /= k;
  total.recall /= k;
  total.f1 /= k;
  return total;
}

EvalReport aggregate(const std::map<std::string, VideoScore>& per_video, double tau_seconds) {
  if (per_video.empty()) throw EvalError("no videos to aggregate");
  EvalReport report;
  report.per_video = per_video;
  report.protocol.tau_seconds = tau_seconds;
  double sum = 0.0;
  for (const auto& [id, s] : per_video) sum += s.f1;
  report.mean_f1 = sum / static_cast<double>(per_video.size());
  return report;
}

std::string to_json(const EvalReport& report) {
  json doc;
  doc["mean_f1"] = report.mean_f1;
  doc["protocol"] = {{"tau_seconds", report.protocol.tau_seconds},
                     {"matching", report.protocol.matching},
                     {"annotator_aggregation", report.protocol.annotator_aggregation}};
  json per = json::object();
  for (const auto& [id, s] : report.per_video)
    per[id] = {{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
  doc["per_video"] = per;
  return doc.dump(2) + "\n";
}

}  // namespace tkf
