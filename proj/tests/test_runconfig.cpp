#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>

#include "umami/common.hpp"
#include "umami/runconfig.hpp"

using namespace umami;

namespace {

// error message must carry the full dotted path so typos are locatable
void check_rejects(const std::string& json, const std::string& path_fragment) {
  try {
    config_from_json_text(json);
    FAIL("expected ConfigError for ", json);
  } catch (const ConfigError& e) {
    CAPTURE(json);
    CHECK(std::string(e.what()).find(path_fragment) != std::string::npos);
  }
}

}  // namespace

TEST_CASE("defaults mirror the shipped recipe and validate cleanly") {
  RunConfig cfg = RunConfig::defaults();
  CHECK(cfg.seed == 0);
  CHECK(cfg.loss_profile == "main-text-lambdas");
  CHECK(cfg.loss.lambda_txt == 1.0);
  CHECK(cfg.loss.lambda_nutrition == 0.1);
  CHECK(cfg.loss.lambda_mask == 1.0);
  CHECK(cfg.loss.lambda_mae == 0.1);
  CHECK(cfg.loss.lambda_mse == 0.0001);
  CHECK(cfg.loss.lambda_bce == 2.0);
  CHECK(cfg.loss.lambda_dice == 0.5);

  CHECK(cfg.stage1.stage == 1);
  CHECK(cfg.stage1.task_ratios.at("vqa") == 2.0);
  CHECK(cfg.stage2.stage == 2);
  CHECK(cfg.stage2.generated_weight == 15.0);
  CHECK(cfg.stage2.public_weight == 7.0);

  REQUIRE(cfg.dialogue.dialogue_bands.size() == 3);
  CHECK(cfg.dialogue.dialogue_bands[0].lo == 1);
  REQUIRE(cfg.dialogue.dialogue_bands[0].hi.has_value());
  CHECK(*cfg.dialogue.dialogue_bands[0].hi == 3);
  CHECK(cfg.dialogue.dialogue_bands[0].topics == 1);
  CHECK(cfg.dialogue.dialogue_bands[0].rounds == 3);
  CHECK_FALSE(cfg.dialogue.dialogue_bands[2].hi.has_value());
  CHECK(cfg.stage2_gen.max_retries == 3);
  CHECK_FALSE(cfg.stage2_gen.use_env_backend);
  CHECK(cfg.eval.max_new_tokens == 96);
  CHECK(cfg.eval.report_basename == "report");
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("unknown keys are rejected with their full dotted path") {
  check_rejects(R"({"sedd": 1})", "sedd");
  check_rejects(R"({"model": {"dmodel": 64}})", "model.dmodel");
  check_rejects(R"({"stage1": {"optim": {"lrr": 0.1}}})", "stage1.optim.lrr");
  check_rejects(R"({"paths": {"output": "x"}})", "paths.output");
  check_rejects(R"({"loss": {"lambda_text": 1.0}})", "loss.lambda_text");
  check_rejects(R"({"refer_policy": {"one_to_zero": 0.1}})", "refer_policy.one_to_zero");
  check_rejects(R"({"stage2_gen": {"retries": 2}})", "stage2_gen.retries");
  check_rejects(R"({"eval": {"max_tokens": 4}})", "eval.max_tokens");
  check_rejects(R"({"dialogue": {"bands": []}})", "dialogue.bands");
  check_rejects(R"({"dialogue": {"dialogue_bands": [{"low": 1}]}})",
                "dialogue.dialogue_bands[0].low");
}

TEST_CASE("values must match their declared types") {
  check_rejects(R"({"seed": -4})", "must be non-negative");
  check_rejects(R"({"seed": "big"})", "must be an integer");
  check_rejects(R"({"model": {"d_model": 1.5}})", "must be an integer");
  check_rejects(R"({"loss": {"lambda_txt": "high"}})", "must be a number");
  check_rejects(R"({"refer_policy": {"allow_hybrid": 1}})", "must be a boolean");
  check_rejects(R"({"paths": {"corpus": 3}})", "must be a string");
  check_rejects(R"({"model": {"proj_dims": 256}})", "must be an array of integers");
  check_rejects(R"({"dialogue": {"dialogue_bands": {}}})", "must be an array of bands");
  check_rejects(R"({"stage1": {"task_ratios": {"vqa": "two"}}})", "stage1.task_ratios.vqa");
  check_rejects(R"({"stage1": 3})", "must be an object");
  check_rejects(R"([1,2,3])", "(root)");
}

TEST_CASE("loss profile applies before explicit loss overrides") {
  // document order must not matter: loss before loss_profile
  RunConfig cfg = config_from_json_text(
      R"({"loss": {"lambda_mae": 0.5}, "loss_profile": "table9-lambdas"})");
  CHECK(cfg.loss_profile == "table9-lambdas");
  CHECK(cfg.loss.lambda_mae == 0.5);   // explicit key wins
  CHECK(cfg.loss.lambda_mse == 1.0);   // from the profile
  CHECK(cfg.loss.lambda_txt == 1.0);   // untouched shared weight

  RunConfig plain = config_from_json_text(R"({"loss_profile": "table9-lambdas"})");
  CHECK(plain.loss.lambda_mae == 0.001);
  CHECK(plain.loss.lambda_mse == 1.0);

  check_rejects(R"({"loss_profile": "fancy"})", "unknown loss profile");
}

TEST_CASE("omitted sections fall back to defaults") {
  RunConfig cfg = config_from_json_text(R"({"seed": 7})");
  CHECK(cfg.seed == 7);
  CHECK(cfg.stage1.task_ratios.at("vqa") == 2.0);
  CHECK(cfg.model.lora_rank == 8);
  CHECK(cfg.model.lora_alpha == 16.0);
  CHECK(cfg.model.lora_dropout == 0.05);

  // partial sections override only the named keys
  RunConfig partial = config_from_json_text(
      R"({"stage1": {"steps": 12, "optim": {"lr": 0.001}}})");
  CHECK(partial.stage1.steps == 12);
  CHECK(partial.stage1.optim.lr == 0.001);
  CHECK(partial.stage1.optim.warmup_steps == 100);       // untouched
  CHECK(partial.stage1.batch_size == 4);                 // untouched
  CHECK(partial.stage1.task_ratios.at("vqa") == 2.0);    // untouched
}

TEST_CASE("the canonical dump round-trips byte-identically") {
  RunConfig cfg = RunConfig::defaults();
  cfg.seed = 123456789;
  cfg.paths.corpus = "data/manifest.json";
  cfg.paths.out = "runs/a";
  cfg.model.d_model = 64;
  cfg.model.proj_dims = {64, 32};
  cfg.loss.lambda_dice = 0.25;
  cfg.stage1.steps = 42;
  cfg.stage2.dataset_weights["extra"] = 2.5;
  cfg.refer_policy.max_refer = 2;
  cfg.dialogue.dialogue_bands = {{1, 5, 2, 3}, {6, std::nullopt, 4, 5}};
  cfg.eval.report_basename = "night";

  std::string text = config_to_json_text(cfg);
  RunConfig back = config_from_json_text(text);
  CHECK(config_to_json_text(back) == text);

  CHECK(back.seed == 123456789);
  CHECK(back.paths.corpus == "data/manifest.json");
  CHECK(back.model.proj_dims == std::vector<long>{64, 32});
  CHECK(back.loss.lambda_dice == 0.25);
  CHECK(back.stage1.steps == 42);
  CHECK(back.stage2.dataset_weights.at("extra") == 2.5);
  CHECK(back.refer_policy.max_refer == 2);
  REQUIRE(back.dialogue.dialogue_bands.size() == 2);
  CHECK(back.dialogue.dialogue_bands[0].hi.has_value());
  CHECK_FALSE(back.dialogue.dialogue_bands[1].hi.has_value());
  CHECK(back.eval.report_basename == "night");

  // defaults too
  std::string def = config_to_json_text(RunConfig::defaults());
  CHECK(config_to_json_text(config_from_json_text(def)) == def);
}

TEST_CASE("unbounded bands serialize hi as null") {
  RunConfig cfg = config_from_json_text(
      R"({"dialogue": {"reasonseg_bands": [
            {"lo": 3, "hi": 6, "topics": 0, "rounds": 3},
            {"lo": 7, "hi": null, "topics": 0, "rounds": 5}]}})");
  REQUIRE(cfg.dialogue.reasonseg_bands.size() == 2);
  CHECK(cfg.dialogue.reasonseg_bands[0].hi.has_value());
  CHECK(*cfg.dialogue.reasonseg_bands[0].hi == 6);
  CHECK_FALSE(cfg.dialogue.reasonseg_bands[1].hi.has_value());
  std::string text = config_to_json_text(cfg);
  CHECK(text.find("\"hi\": null") != std::string::npos);
}

TEST_CASE("validation catches cross-field mistakes") {
  RunConfig cfg = RunConfig::defaults();
  cfg.stage1.stage = 2;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig::defaults();
  cfg.stage2_gen.max_retries = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig::defaults();
  cfg.eval.max_new_tokens = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig::defaults();
  cfg.loss.lambda_txt = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = RunConfig::defaults();
  cfg.model.d_model = 30;  // not divisible by heads... definitely invalid
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  // parsing always normalizes the stage numbers, so documents cannot break them
  RunConfig parsed = config_from_json_text(R"({"stage1": {"steps": 1}})");
  CHECK(parsed.stage1.stage == 1);
  CHECK(parsed.stage2.stage == 2);
}

TEST_CASE("configs load from disk and malformed files fail loudly") {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "umami_test_runconfig";
  fs::remove_all(dir);
  fs::create_directories(dir);

  fs::path good = dir / "good.json";
  std::ofstream(good) << R"({"seed": 11, "eval": {"report_basename": "r2"}})";
  RunConfig cfg = load_run_config(good.string());
  CHECK(cfg.seed == 11);
  CHECK(cfg.eval.report_basename == "r2");

  fs::path bad = dir / "bad.json";
  std::ofstream(bad) << "{ seed: 11 ";
  try {
    load_run_config(bad.string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("malformed config JSON") != std::string::npos);
  }

  CHECK_THROWS_AS(load_run_config((dir / "missing.json").string()), DataError);
}
