#include <filesystem>
#include <fstream>

#include "dguide/checksum.hpp"
#include "dguide/pipeline.hpp"
#include "test_support.hpp"

using namespace dguide;
namespace fs = std::filesystem;

namespace {

PipelineConfig tiny_pipeline() {
  PipelineConfig c;
  c.seed = 3;
  c.diffusion_steps = 10;
  c.beta_end = 0.2;
  c.base_samples = 40;
  c.paired_samples = 30;
  c.fake_samples = 20;
  c.eval_samples = 25;
  c.base_training.max_steps = 2;
  c.base_training.batch_size = 16;
  c.disc_training.max_steps = 3;
  c.disc_training.batch_size = 16;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(PipelineConfig, JsonRoundTripAndDefaults) {
  const PipelineConfig d;
  EXPECT_EQ(d.diffusion_steps, 500);
  EXPECT_EQ(d.eval_samples, 4000);
  EXPECT_TRUE(d.base_training.cosine_lr);
  EXPECT_EQ(d.base_training.early_stop_window, 0);
  EXPECT_EQ(to_json(d.disc_training), to_json(d.base_training));
  EXPECT_FALSE(TrainConfig{}.cosine_lr);
  const PipelineConfig c = tiny_pipeline();
  EXPECT_EQ(to_json(pipeline_config_from_json(to_json(c))), to_json(c));
  const auto partial = pipeline_config_from_json({{"seed", 9}, {"disc_training", {{"max_steps", 7}}}});
  EXPECT_EQ(partial.seed, 9u);
  EXPECT_EQ(partial.disc_training.max_steps, 7);
  EXPECT_EQ(partial.disc_training.batch_size, d.disc_training.batch_size);
  EXPECT_EQ(to_json(partial).at("base_training"), to_json(d).at("base_training"));
  const auto base_only = pipeline_config_from_json({{"base_training", {{"max_steps", 30}}}});
  EXPECT_EQ(base_only.base_training.max_steps, 30);
  EXPECT_DOUBLE_EQ(base_only.base_training.ema_decay, 0.995);
}

TEST(PipelineConfig, RejectsBadInput) {
  auto kind = [](const nlohmann::json& j) {
    return dguide::testing::error_kind_of([&] { pipeline_config_from_json(j); });
  };
  EXPECT_EQ(kind({{"sed", 1}}), ErrorKind::Config);
  EXPECT_EQ(kind({{"base_training", {{"w_disc", 1.0}}}}), ErrorKind::Config);
  EXPECT_EQ(kind({{"eval_samples", 0}}), ErrorKind::Config);
  EXPECT_EQ(kind({{"diffusion_steps", "many"}}), ErrorKind::Config);
  EXPECT_EQ(kind(nlohmann::json::array()), ErrorKind::Config);
  EXPECT_EQ(dguide::testing::error_kind_of([] { load_pipeline_config(dguide::testing::temp_path("none.json")); }),
            ErrorKind::MissingArtifact);
}

TEST(PipelineConfig, HashIsCanonical) {
  const nlohmann::json a = nlohmann::json::parse(R"({"a": 1, "b": [1, 2]})");
  const nlohmann::json b = nlohmann::json::parse(R"({"b": [1, 2],   "a": 1})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_NE(config_hash(a), config_hash({{"a", 2}, {"b", {1, 2}}}));
  EXPECT_EQ(config_hash(a).size(), 64u);
}

TEST(StageSeeds, DistinctAndStable) {
  const auto s = StageSeeds::from_global(0);
  EXPECT_NE(s.data, s.init);
  EXPECT_NE(s.training, s.sampling);
  EXPECT_EQ(StageSeeds::from_global(0).to_json(), s.to_json());
  EXPECT_NE(StageSeeds::from_global(1).data, s.data);
}

TEST(LossWeights, Names) {
  EXPECT_EQ(loss_weights("disc"), std::make_pair(1.0, 0.0));
  EXPECT_EQ(loss_weights("denoise"), std::make_pair(0.0, 1.0));
  EXPECT_EQ(loss_weights("all"), std::make_pair(1.0, 1.0));
  EXPECT_EQ(dguide::testing::error_kind_of([] { loss_weights("both"); }), ErrorKind::Config);
}

TEST(RunDir, ExplicitAndDerived) {
  const std::string root = dguide::testing::temp_path("runroot");
  ::setenv("DGUIDE_RUN_ROOT", root.c_str(), 1);
  const std::string hash(64, 'a');
  const std::string dir = resolve_run_dir("", "eval", hash);
  EXPECT_EQ(fs::path(dir).filename(), "eval-aaaaaaaaaaaa");
  EXPECT_TRUE(fs::is_directory(dir));
  const std::string explicit_dir = dguide::testing::temp_path("explicit/run");
  EXPECT_EQ(fs::path(resolve_run_dir(explicit_dir, "eval", hash)), fs::path(explicit_dir));
  EXPECT_TRUE(fs::is_directory(explicit_dir));
  ::unsetenv("DGUIDE_RUN_ROOT");
}

TEST(Manifest, RecordsChecksumsAndRelativePaths) {
  const std::string dir = dguide::testing::temp_path("manifest");
  fs::create_directories(dir);
  const std::string art = dir + "/a.txt";
  std::ofstream(art) << "hello";
  const std::string outside = dguide::testing::temp_path("outside.txt");
  std::ofstream(outside) << "x";
  Manifest m("eval", {{"k", 1}});
  m.set("seed", 4);
  m.add_input("samples", outside);
  m.add_artifact("report", art);
  m.write(dir);
  const auto j = nlohmann::json::parse(slurp(fs::path(dir) / "manifest.json"));
  EXPECT_EQ(j.at("command"), "eval");
  EXPECT_EQ(j.at("seed"), 4);
  EXPECT_EQ(j.at("config_hash"), config_hash({{"k", 1}}));
  EXPECT_EQ(j.at("code_version"), code_version());
  EXPECT_EQ(j.at("artifacts")[0].at("path"), "a.txt");
  EXPECT_EQ(j.at("artifacts")[0].at("sha256"), sha256_hex("hello"));
  EXPECT_EQ(j.at("inputs")[0].at("path"), outside);
  Manifest missing("eval", {});
  missing.add_artifact("gone", dir + "/gone.txt");
  EXPECT_EQ(dguide::testing::error_kind_of([&] { missing.write(dir); }), ErrorKind::MissingArtifact);
}

TEST(Checksum, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(ReproduceTable1, TinyRunIsDeterministic) {
  const std::string a = dguide::testing::temp_path("table_a"), b = dguide::testing::temp_path("table_b");
  const auto ra = reproduce_table1("both", tiny_pipeline(), a);
  reproduce_table1("both", tiny_pipeline(), b);
  ASSERT_EQ(ra.size(), 2u);
  for (const auto& r : ra) {
    ASSERT_EQ(r.rows.size(), 5u);
    EXPECT_EQ(r.rows[0].name, "GT");
    EXPECT_EQ(r.row("L_all").nll.n, 25);
  }
  EXPECT_EQ(dguide::testing::error_kind_of([&] { ra[0].row("L_none"); }), ErrorKind::Contract);
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), a);
    EXPECT_EQ(slurp(e.path()), slurp(fs::path(b) / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 20);
  const auto manifest = nlohmann::json::parse(slurp(fs::path(a) / "manifest.json"));
  EXPECT_EQ(manifest.at("setting"), "both");
  for (const auto& art : manifest.at("artifacts"))
    EXPECT_EQ(art.at("sha256"), file_sha256((fs::path(a) / art.at("path").get<std::string>()).string()));
  EXPECT_NE(format_table1(ra).find("L_denoise"), std::string::npos);
}

TEST(ReproduceTable1, UnknownSetting) {
  EXPECT_EQ(dguide::testing::error_kind_of(
                [] { reproduce_table1("mixed", tiny_pipeline(), dguide::testing::temp_path("bad")); }),
            ErrorKind::Config);
}
