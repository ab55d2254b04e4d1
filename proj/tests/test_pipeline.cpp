#include <array>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

// Eigen must precede httplib: <resolv.h> defines a macro that collides with Eigen internals.
#include "tkf/pipeline.hpp"
#include "tkf/providers.hpp"
#include "support/fake_sidecar.hpp"
#include "support/synthetic.hpp"

namespace tkf {
namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string without_generated_at(const std::string& manifest_text) {
  auto j = nlohmann::json::parse(manifest_text);
  j.erase("generated_at");
  return j.dump();
}

PipelineConfig stub_config(const fs::path& out) {
  PipelineConfig c;
  c.providers.mode = ProviderMode::stub;
  c.output_dir = out.string();
  c.workers = 2;
  return c;
}

class FourScenes : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = testing::temp_dir("pipeline_four");
    video_ = dir_ / "four_scenes.avi";
    testing::write_scene_video(video_, testing::four_scenes(), 5.0);
  }
  static inline fs::path dir_;
  static inline fs::path video_;
};

// ---- config ----

TEST(Config, DefaultsRoundTrip) {
  const PipelineConfig c;
  EXPECT_EQ(config_from_json(config_to_json(c)), c);
  EXPECT_EQ(config_from_json("{}"), c);
}

TEST(Config, CustomRoundTripAndSortedKeys) {
  PipelineConfig c;
  c.sampling_rate = 0.5;
  c.providers.mode = ProviderMode::cache_only;
  c.providers.cache_dir = "/tmp/cache";
  c.providers.provider_id = "stub-v1";
  c.fusion_k = 64;
  c.cluster_grid = {{3, 2}, {5, 5}};
  c.quality.saliency_min = 0.1;
  c.dedup_threshold = 0.7;
  c.eval_tau = 2.5;
  c.output_dir = "elsewhere";
  c.workers = 1;
  c.write_dumps = true;
  const std::string text = config_to_json(c);
  EXPECT_EQ(config_from_json(text), c);
  EXPECT_LT(text.find("\"cluster_grid\""), text.find("\"dedup_threshold\""));
  EXPECT_LT(text.find("\"workers\""), text.find("\"write_dumps\""));
  EXPECT_NE(text.find("\n  \"eval_tau\": 2.5"), std::string::npos);
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
  EXPECT_THROW(config_from_json(R"({"sampling_rat": 1})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"providers": {"url": "x"}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"fusion_k": 1.5})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"providers": {"mode": "gpu"}})"), ConfigError);
  EXPECT_THROW(config_from_json(R"({"cluster_grid": [{"min_cluster_size": 3, "extra": 1}]})"), ConfigError);
  EXPECT_THROW(config_from_json("not json"), ConfigError);
  EXPECT_EQ(config_from_json(R"({"sampling_rate": 2})").sampling_rate, 2.0);
}

TEST(Config, Validation) {
  PipelineConfig c;
  EXPECT_NO_THROW(validate_config(c));
  c.sampling_rate = 0;
  EXPECT_THROW(validate_config(c), ConfigError);
  c = {};
  c.cluster_grid = {{1, 1}};
  EXPECT_THROW(validate_config(c), ConfigError);
  c = {};
  c.workers = 0;
  EXPECT_THROW(validate_config(c), ConfigError);
}

TEST(Config, EnvironmentOverridesEndpoint) {
  PipelineConfig c;
  ::unsetenv(kProviderUrlEnv);
  apply_env_overrides(c);
  EXPECT_EQ(c.providers.endpoint, "http://127.0.0.1:8765");
  ::setenv(kProviderUrlEnv, "http://10.0.0.2:9000", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.providers.endpoint, "http://10.0.0.2:9000");
  ::unsetenv(kProviderUrlEnv);
}

// ---- extract ----

TEST_F(FourScenes, ProducesOneKeyframePerSceneReproducibly) {
  const fs::path out = dir_ / "out_a";
  const SummaryManifest m = run_extract(stub_config(out), video_);
  EXPECT_EQ(m.video_id, "four_scenes");
  EXPECT_EQ(m.counts.sampled, 60);
  EXPECT_GE(m.n_clusters, 3);
  EXPECT_GE(m.keyframes.size(), 1u);
  EXPECT_LE(m.keyframes.size(), 8u);
  std::set<int> clusters;
  for (const auto& k : m.keyframes) {
    clusters.insert(k.cluster);
    EXPECT_TRUE(fs::exists(out / k.image)) << k.image;
    char name[32];
    std::snprintf(name, sizeof name, "kf_%06lld.png", static_cast<long long>(k.sample_index));
    EXPECT_EQ(k.image, name);
  }
  EXPECT_GE(clusters.size(), 3u);
  EXPECT_EQ(clusters.size(), m.keyframes.size());
  EXPECT_TRUE(fs::exists(out / kContactSheetName));
  EXPECT_TRUE(fs::exists(out / kManifestName));
  EXPECT_EQ(m.effective_k, 59);
  EXPECT_GE(m.counts.medoids, m.counts.quality_kept);
  EXPECT_GE(m.counts.quality_kept, m.counts.deduped);
  EXPECT_GE(m.counts.sampled, m.counts.clustered);

  const std::string first = slurp(out / kManifestName);
  run_extract(stub_config(out), video_);
  EXPECT_EQ(without_generated_at(slurp(out / kManifestName)), without_generated_at(first));
}

TEST_F(FourScenes, ManifestJsonRoundTrip) {
  const SummaryManifest m = run_extract(stub_config(dir_ / "out_rt"), video_);
  const std::string text = manifest_to_json(m);
  EXPECT_EQ(manifest_to_json(manifest_from_json(text)), text);
  EXPECT_EQ(slurp(dir_ / "out_rt" / kManifestName), text);
  const std::string pretty = inspect_manifest(m);
  EXPECT_NE(pretty.find("four_scenes"), std::string::npos);
  EXPECT_NE(pretty.find("kf_"), std::string::npos);
}

TEST_F(FourScenes, DropsUseClosedVocabulary) {
  PipelineConfig c = stub_config(dir_ / "out_drops");
  c.quality.saliency_min = 0.99;  // most medoids fail saliency
  c.quality.saliency_max = 1.0;
  const SummaryManifest m = run_extract(c, video_);
  const std::set<std::string> quality_reasons = {"low_light", "blurry", "uniform", "non_salient"};
  for (const auto& d : m.drops) {
    if (d.stage == "quality")
      EXPECT_TRUE(quality_reasons.contains(d.reason)) << d.reason;
    else
      EXPECT_TRUE(d.stage == "dedup" && d.reason == "near_duplicate") << d.stage << "/" << d.reason;
  }
  EXPECT_EQ(static_cast<std::int64_t>(m.drops.size()), m.counts.medoids - m.counts.deduped);
}

TEST_F(FourScenes, DumpsHaveDeclaredShapes) {
  PipelineConfig c = stub_config(dir_ / "out_dumps");
  c.write_dumps = true;
  const SummaryManifest m = run_extract(c, video_);
  const fs::path out = c.output_dir;
  EXPECT_EQ(fs::file_size(out / "features_color.f32"), 60u * 778u * 4u);
  EXPECT_EQ(fs::file_size(out / "embeddings.f32"), 60u * static_cast<std::uintmax_t>(m.effective_k) * 4u);
  const auto header = nlohmann::json::parse(slurp(out / "embeddings.json"));
  EXPECT_EQ(header.at("n"), 60);
  EXPECT_EQ(header.at("k"), m.effective_k);
  EXPECT_EQ(header.at("video_id"), "four_scenes");
  const auto index = nlohmann::json::parse(slurp(out / "features_color.json"));
  EXPECT_EQ(index.at("rows").at("59"), 59);
  EXPECT_TRUE(fs::exists(out / "cluster_report.json"));
}

TEST_F(FourScenes, CacheOnlyReplaysStubCache) {
  const fs::path cache = dir_ / "cache";
  PipelineConfig warm = stub_config(dir_ / "out_warm");
  warm.providers.cache_dir = cache.string();
  const SummaryManifest a = run_extract(warm, video_);

  PipelineConfig replay = stub_config(dir_ / "out_replay");
  replay.providers.mode = ProviderMode::cache_only;
  replay.providers.cache_dir = cache.string();
  replay.providers.provider_id = "stub-v1";
  const SummaryManifest b = run_extract(replay, video_);
  ASSERT_EQ(a.keyframes.size(), b.keyframes.size());
  for (std::size_t i = 0; i < a.keyframes.size(); ++i) EXPECT_EQ(a.keyframes[i].sample_index, b.keyframes[i].sample_index);

  replay.providers.provider_id = "other";
  replay.output_dir = (dir_ / "out_miss").string();
  try {
    run_extract(replay, video_);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "providers");
  }
  EXPECT_FALSE(fs::exists(dir_ / "out_miss"));
}

TEST_F(FourScenes, RemoteModeAgainstSidecar) {
  testing::FakeSidecar sidecar;
  PipelineConfig c = stub_config(dir_ / "out_remote");
  c.providers.mode = ProviderMode::remote;
  c.providers.endpoint = sidecar.url();
  const SummaryManifest m = run_extract(c, video_);
  EXPECT_EQ(sidecar.calls("/embed/image"), 60);
  EXPECT_EQ(m.structural_provider, "sidecar@" + sidecar.url());
  for (const auto& k : m.keyframes) EXPECT_EQ(k.caption, "A red square on a gray background.");
}

TEST_F(FourScenes, UnreachableProviderNamesStageAndLeavesNoOutput) {
  PipelineConfig c = stub_config(dir_ / "out_unreachable");
  c.providers.mode = ProviderMode::remote;
  c.providers.endpoint = "http://127.0.0.1:9";
  c.providers.retry_attempts = 1;
  try {
    run_extract(c, video_);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "providers");
    EXPECT_EQ(std::string(e.what()).rfind("providers: ", 0), 0u);
  }
  EXPECT_FALSE(fs::exists(c.output_dir));
}

TEST_F(FourScenes, OutputFailureRemovesPartialFiles) {
  const fs::path out = dir_ / "out_partial";
  fs::create_directories(out / kContactSheetName);  // a directory where the sheet should go
  std::ofstream(out / "keep_me.txt") << "user file";
  try {
    run_extract(stub_config(out), video_);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "output");
  }
  EXPECT_TRUE(fs::exists(out / "keep_me.txt"));
  EXPECT_FALSE(fs::exists(out / kManifestName));
  for (const auto& entry : fs::directory_iterator(out))
    EXPECT_NE(entry.path().filename().string().rfind("kf_", 0), 0u) << entry.path();
}

TEST(Extract, SingleFrameTakesFallbackPath) {
  const fs::path dir = testing::temp_dir("pipeline_one");
  std::mt19937 rng(5);
  testing::write_png_sequence(dir / "single", {testing::random_rgb(64, 48, rng)}, 1.0);
  const SummaryManifest m = run_extract(stub_config(dir / "out"), dir / "single");
  ASSERT_EQ(m.keyframes.size(), 1u);
  EXPECT_EQ(m.cluster_selection, "grid exhausted → single cluster");
  EXPECT_FALSE(m.cluster_params);
  EXPECT_EQ(m.effective_k, 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "kf_000000.png"));
}

TEST(Extract, IngestErrorsAreTagged) {
  const fs::path dir = testing::temp_dir("pipeline_bad_input");
  try {
    run_extract(stub_config(dir / "out"), dir / "nope.mp4");
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "ingest");
  }
}

// ---- eval ----

SummaryManifest manifest_with(const std::string& id, std::vector<std::int64_t> sources) {
  SummaryManifest m;
  m.video_id = id;
  m.fps = 1.0;
  for (auto s : sources) {
    ManifestKeyframe k;
    k.source_index = s;
    k.sample_index = s;
    k.image = "kf.png";
    m.keyframes.push_back(k);
  }
  return m;
}

void write_gt(const fs::path& dir, const std::string& id, std::vector<std::int64_t> frames) {
  fs::create_directories(dir);
  const nlohmann::json j = {{"video_id", id}, {"fps", 1.0}, {"n_frames", 1000}, {"annotators", {frames}}};
  std::ofstream(dir / (id + ".json")) << j.dump();
}

void write_manifest(const fs::path& dir, const SummaryManifest& m) {
  fs::create_directories(dir);
  std::ofstream(dir / kManifestName) << manifest_to_json(m);
}

TEST(Eval, PerfectNoOverlapAndMixed) {
  const fs::path root = testing::temp_dir("pipeline_eval");
  write_gt(root / "gt", "a", {10, 50, 90});
  write_gt(root / "gt", "b", {100, 200});
  write_manifest(root / "m1" / "a", manifest_with("a", {10, 50, 90}));
  write_manifest(root / "m2" / "b", manifest_with("b", {500}));
  EXPECT_EQ(run_eval(root / "m1", root / "gt", 1.0).mean_f1, 1.0);
  EXPECT_EQ(run_eval(root / "m2", root / "gt", 1.0).mean_f1, 0.0);

  write_manifest(root / "mixed" / "a", manifest_with("a", {10, 50, 90}));
  write_manifest(root / "mixed" / "b", manifest_with("b", {100, 900}));  // F1 0.5
  const EvalReport r = run_eval(root / "mixed", root / "gt", 1.0);
  EXPECT_EQ(r.per_video.size(), 2u);
  EXPECT_DOUBLE_EQ(r.per_video.at("b").f1, 0.5);
  EXPECT_DOUBLE_EQ(r.mean_f1, 0.75);
}

TEST(Eval, MissingGroundTruthNamesVideo) {
  const fs::path root = testing::temp_dir("pipeline_eval_missing");
  write_gt(root / "gt", "a", {1});
  write_manifest(root / "m" / "zzz", manifest_with("zzz", {1}));
  try {
    run_eval(root / "m", root / "gt", 1.0);
    FAIL();
  } catch (const EvalError& e) {
    EXPECT_NE(std::string(e.what()).find("zzz"), std::string::npos);
  }
  EXPECT_THROW(run_eval(root / "empty", root / "gt", 1.0), EvalError);
}

// ---- command line ----

struct CliRun {
  int code;
  std::string out;
};

CliRun run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" TKF_CLI_PATH "' " + args + " 2>&1";
  CliRun r{0, ""};
  FILE* pipe = ::popen(cmd.c_str(), "r");
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) r.out.append(buf.data(), n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

TEST_F(FourScenes, CliExtractInspectEval) {
  const fs::path out = dir_ / "cli_out";
  const fs::path cfg = dir_ / "cli_config.json";
  std::ofstream(cfg) << R"({"workers": 1, "providers": {"mode": "remote"}})";
  const CliRun ex = run_cli("extract --input '" + video_.string() + "' --config '" + cfg.string() + "' --out '" +
                         out.string() + "' --stub-providers");
  ASSERT_EQ(ex.code, 0) << ex.out;
  const SummaryManifest m = load_manifest(out / kManifestName);
  EXPECT_EQ(m.config.providers.mode, ProviderMode::stub);  // flag beats file
  EXPECT_EQ(m.config.workers, 1);                           // file beats default
  EXPECT_EQ(m.config.output_dir, out.string());

  const CliRun in = run_cli("inspect '" + (out / kManifestName).string() + "'");
  EXPECT_EQ(in.code, 0);
  EXPECT_NE(in.out.find("keyframes ("), std::string::npos);

  const fs::path gt = dir_ / "cli_gt";
  std::vector<std::int64_t> frames;
  for (const auto& k : m.keyframes) frames.push_back(k.source_index);
  fs::create_directories(gt);
  std::ofstream(gt / "four_scenes.json")
      << nlohmann::json{{"video_id", "four_scenes"}, {"fps", 5.0}, {"n_frames", 300}, {"annotators", {frames}}}.dump();
  const CliRun ev = run_cli("eval --manifests '" + out.string() + "' --ground-truth '" + gt.string() + "' --tau 0.5");
  ASSERT_EQ(ev.code, 0) << ev.out;
  const auto report = nlohmann::json::parse(ev.out);
  EXPECT_EQ(report.at("mean_f1"), 1.0);
  EXPECT_EQ(report.at("protocol").at("tau_seconds"), 0.5);
}

TEST_F(FourScenes, CliFailuresExitNonzero) {
  const fs::path out = dir_ / "cli_fail";
  const CliRun unreachable =
      run_cli("extract --input '" + video_.string() + "' --out '" + out.string() + "'",
              std::string(kProviderUrlEnv) + "=http://127.0.0.1:9");
  EXPECT_NE(unreachable.code, 0);
  EXPECT_NE(unreachable.out.find("providers"), std::string::npos) << unreachable.out;
  EXPECT_NE(unreachable.out.find("127.0.0.1:9"), std::string::npos) << unreachable.out;
  EXPECT_FALSE(fs::exists(out));

  const fs::path bad = dir_ / "bad_config.json";
  std::ofstream(bad) << R"({"nonsense": true})";
  const CliRun cfg = run_cli("extract --input '" + video_.string() + "' --config '" + bad.string() + "'");
  EXPECT_NE(cfg.code, 0);
  EXPECT_NE(cfg.out.find("nonsense"), std::string::npos);

  EXPECT_NE(run_cli("inspect '" + (dir_ / "missing.json").string() + "'").code, 0);
  EXPECT_NE(run_cli("frobnicate").code, 0);
}

}  // namespace
}  // namespace tkf
