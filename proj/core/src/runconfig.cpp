#include "umami/runconfig.hpp"

#include <cmath>
#include <utility>

#include "json.hpp"
#include "umami/imageio.hpp"

namespace umami {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string join_path(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config key " + path + " " + what);
}

void expect_object(const ordered_json& v, const std::string& path) {
  if (!v.is_object()) fail(path, "must be an object");
}

double as_number(const ordered_json& v, const std::string& path) {
  if (!v.is_number()) fail(path, "must be a number");
  return v.get<double>();
}

long as_integer(const ordered_json& v, const std::string& path) {
  if (!v.is_number_integer() && !v.is_number_unsigned())
    fail(path, "must be an integer");
  return v.get<long>();
}

std::uint64_t as_seed(const ordered_json& v, const std::string& path) {
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer()) {
    const auto s = v.get<std::int64_t>();
    if (s < 0) fail(path, "must be non-negative");
    return static_cast<std::uint64_t>(s);
  }
  fail(path, "must be an integer");
}

bool as_bool(const ordered_json& v, const std::string& path) {
  if (!v.is_boolean()) fail(path, "must be a boolean");
  return v.get<bool>();
}

std::string as_string(const ordered_json& v, const std::string& path) {
  if (!v.is_string()) fail(path, "must be a string");
  return v.get<std::string>();
}

std::vector<long> as_integer_list(const ordered_json& v, const std::string& path) {
  if (!v.is_array()) fail(path, "must be an array of integers");
  std::vector<long> out;
  for (const auto& item : v) out.push_back(as_integer(item, path));
  return out;
}

std::vector<int> as_int_list(const ordered_json& v, const std::string& path) {
  std::vector<int> out;
  for (long x : as_integer_list(v, path)) out.push_back(static_cast<int>(x));
  return out;
}

std::map<std::string, double> as_weight_map(const ordered_json& v,
                                            const std::string& path) {
  expect_object(v, path);
  std::map<std::string, double> out;
  for (const auto& [key, value] : v.items())
    out[key] = as_number(value, join_path(path, key));
  return out;
}

void parse_paths(const ordered_json& j, RunConfig::Paths& out,
                 const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "corpus") out.corpus = as_string(value, at);
    else if (key == "shards") out.shards = as_string(value, at);
    else if (key == "out") out.out = as_string(value, at);
    else if (key == "checkpoint") out.checkpoint = as_string(value, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

void parse_model(const ordered_json& j, ModelConfig& out, const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "d_model") out.d_model = as_integer(value, at);
    else if (key == "n_layers") out.n_layers = as_integer(value, at);
    else if (key == "n_heads") out.n_heads = as_integer(value, at);
    else if (key == "image_size") out.image_size = as_integer(value, at);
    else if (key == "patch_size") out.patch_size = as_integer(value, at);
    else if (key == "max_seq_len") out.max_seq_len = as_integer(value, at);
    else if (key == "ff_mult") out.ff_mult = as_integer(value, at);
    else if (key == "proj_dims") out.proj_dims = as_integer_list(value, at);
    else if (key == "head_dims") out.head_dims = as_integer_list(value, at);
    else if (key == "lora_rank") out.lora_rank = static_cast<int>(as_integer(value, at));
    else if (key == "lora_alpha") out.lora_alpha = as_number(value, at);
    else if (key == "lora_dropout") out.lora_dropout = as_number(value, at);
    else if (key == "mask_decode_dim") out.mask_decode_dim = as_integer(value, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

void parse_loss(const ordered_json& j, LossWeights& out, const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "lambda_txt") out.lambda_txt = as_number(value, at);
    else if (key == "lambda_nutrition") out.lambda_nutrition = as_number(value, at);
    else if (key == "lambda_mask") out.lambda_mask = as_number(value, at);
    else if (key == "lambda_mae") out.lambda_mae = as_number(value, at);
    else if (key == "lambda_mse") out.lambda_mse = as_number(value, at);
    else if (key == "lambda_bce") out.lambda_bce = as_number(value, at);
    else if (key == "lambda_dice") out.lambda_dice = as_number(value, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

void parse_refer_policy(const ordered_json& j, ReferMixPolicy& out,
                        const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "one_to_zero_rate") out.one_to_zero_rate = as_number(value, at);
    else if (key == "absent_count_ratio") out.absent_count_ratio = as_int_list(value, at);
    else if (key == "max_refer") out.max_refer = static_cast<int>(as_integer(value, at));
    else if (key == "max_absent") out.max_absent = static_cast<int>(as_integer(value, at));
    else if (key == "allow_hybrid") out.allow_hybrid = as_bool(value, at);
    else if (key == "segall_template_prob") out.segall_template_prob = as_number(value, at);
    else if (key == "masks_complete") out.masks_complete = as_bool(value, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

void parse_optim(const ordered_json& j, OptimizerConfig& out, const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "lr") out.lr = as_number(value, at);
    else if (key == "weight_decay") out.weight_decay = as_number(value, at);
    else if (key == "beta1") out.beta1 = as_number(value, at);
    else if (key == "beta2") out.beta2 = as_number(value, at);
    else if (key == "eps") out.eps = as_number(value, at);
    else if (key == "warmup_steps") out.warmup_steps = as_integer(value, at);
    else if (key == "grad_clip") out.grad_clip = as_number(value, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

void parse_stage_plan(const ordered_json& j, StagePlan& out, const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "task_ratios") out.task_ratios = as_weight_map(value, at);
    else if (key == "dataset_weights") out.dataset_weights = as_weight_map(value, at);
    else if (key == "generated_weight") out.generated_weight = as_number(value, at);
    else if (key == "public_weight") out.public_weight = as_number(value, at);
    else if (key == "batch_size") out.batch_size = as_integer(value, at);
    else if (key == "steps") out.steps = as_integer(value, at);
    else if (key == "checkpoint_every") out.checkpoint_every = as_integer(value, at);
    else if (key == "optim") parse_optim(value, out.optim, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

std::vector<TopicRoundBand> parse_bands(const ordered_json& j, const std::string& path) {
  if (!j.is_array()) fail(path, "must be an array of bands");
  std::vector<TopicRoundBand> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string at = path + "[" + std::to_string(i) + "]";
    expect_object(j[i], at);
    TopicRoundBand band;
    for (const auto& [key, value] : j[i].items()) {
      const std::string field = join_path(at, key);
      if (key == "lo") band.lo = static_cast<std::size_t>(as_integer(value, field));
      else if (key == "hi") {
        if (value.is_null()) band.hi.reset();
        else band.hi = static_cast<std::size_t>(as_integer(value, field));
      } else if (key == "topics") band.topics = static_cast<int>(as_integer(value, field));
      else if (key == "rounds") band.rounds = static_cast<int>(as_integer(value, field));
      else throw ConfigError("unknown config key: " + field);
    }
    out.push_back(band);
  }
  return out;
}

void parse_dialogue(const ordered_json& j, TopicRoundPolicy& out,
                    const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "dialogue_bands") out.dialogue_bands = parse_bands(value, at);
    else if (key == "reasonseg_bands") out.reasonseg_bands = parse_bands(value, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

void parse_stage2_gen(const ordered_json& j, RunConfig::Stage2Gen& out,
                      const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "max_retries") out.max_retries = static_cast<int>(as_integer(value, at));
    else if (key == "use_env_backend") out.use_env_backend = as_bool(value, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

void parse_eval(const ordered_json& j, RunConfig::Eval& out, const std::string& path) {
  expect_object(j, path);
  for (const auto& [key, value] : j.items()) {
    const std::string at = join_path(path, key);
    if (key == "max_new_tokens") out.max_new_tokens = as_integer(value, at);
    else if (key == "report_basename") out.report_basename = as_string(value, at);
    else throw ConfigError("unknown config key: " + at);
  }
}

ordered_json weight_map_json(const std::map<std::string, double>& weights) {
  ordered_json out = ordered_json::object();
  for (const auto& [key, value] : weights) out[key] = value;
  return out;
}

ordered_json bands_json(const std::vector<TopicRoundBand>& bands) {
  ordered_json out = ordered_json::array();
  for (const auto& band : bands) {
    ordered_json b = ordered_json::object();
    b["lo"] = band.lo;
    if (band.hi) b["hi"] = *band.hi;
    else b["hi"] = nullptr;
    b["topics"] = band.topics;
    b["rounds"] = band.rounds;
    out.push_back(std::move(b));
  }
  return out;
}

ordered_json optim_json(const OptimizerConfig& opt) {
  ordered_json out = ordered_json::object();
  out["lr"] = opt.lr;
  out["weight_decay"] = opt.weight_decay;
  out["beta1"] = opt.beta1;
  out["beta2"] = opt.beta2;
  out["eps"] = opt.eps;
  out["warmup_steps"] = opt.warmup_steps;
  out["grad_clip"] = opt.grad_clip;
  return out;
}

ordered_json stage_plan_json(const StagePlan& plan) {
  ordered_json out = ordered_json::object();
  out["task_ratios"] = weight_map_json(plan.task_ratios);
  out["dataset_weights"] = weight_map_json(plan.dataset_weights);
  out["generated_weight"] = plan.generated_weight;
  out["public_weight"] = plan.public_weight;
  out["batch_size"] = plan.batch_size;
  out["steps"] = plan.steps;
  out["checkpoint_every"] = plan.checkpoint_every;
  out["optim"] = optim_json(plan.optim);
  return out;
}

}  // namespace

RunConfig RunConfig::defaults() {
  RunConfig config;
  config.stage1 = StagePlan::stage1_defaults();
  config.stage2 = StagePlan::stage2_defaults();
  config.dialogue = TopicRoundPolicy::defaults();
  config.apply_loss_profile();
  return config;
}

void RunConfig::apply_loss_profile() {
  LossWeights profile;
  if (loss_profile == "main-text-lambdas") {
    profile = LossWeights::main_text_profile();
  } else if (loss_profile == "table9-lambdas") {
    profile = LossWeights::table_profile();
  } else {
    throw ConfigError("unknown loss profile: " + loss_profile);
  }
  // Profiles only pin the regression emphasis; other weights stay as set.
  loss.lambda_mae = profile.lambda_mae;
  loss.lambda_mse = profile.lambda_mse;
}

void RunConfig::validate() const {
  if (loss_profile != "main-text-lambdas" && loss_profile != "table9-lambdas")
    throw ConfigError("unknown loss profile: " + loss_profile);
  model.validate();
  loss.validate();
  refer_policy.validate();
  stage1.validate();
  if (stage1.stage != 1) throw ConfigError("stage1 plan must have stage=1");
  stage2.validate();
  if (stage2.stage != 2) throw ConfigError("stage2 plan must have stage=2");
  dialogue.validate();
  if (stage2_gen.max_retries < 1)
    throw ConfigError("stage2_gen.max_retries must be at least 1");
  if (eval.max_new_tokens < 1)
    throw ConfigError("eval.max_new_tokens must be at least 1");
}

RunConfig config_from_json_text(const std::string& text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw ConfigError(std::string("malformed config JSON: ") + e.what());
  }
  expect_object(doc, "(root)");

  RunConfig config = RunConfig::defaults();
  // The profile swaps regression lambdas before explicit loss keys are read,
  // so a document can pick a profile and still override individual weights.
  if (doc.contains("loss_profile")) {
    config.loss_profile = as_string(doc["loss_profile"], "loss_profile");
    config.apply_loss_profile();
  }
  for (const auto& [key, value] : doc.items()) {
    if (key == "seed") config.seed = as_seed(value, "seed");
    else if (key == "paths") parse_paths(value, config.paths, "paths");
    else if (key == "model") parse_model(value, config.model, "model");
    else if (key == "loss") parse_loss(value, config.loss, "loss");
    else if (key == "loss_profile") continue;  // handled above
    else if (key == "refer_policy") parse_refer_policy(value, config.refer_policy, "refer_policy");
    else if (key == "stage1") parse_stage_plan(value, config.stage1, "stage1");
    else if (key == "stage2") parse_stage_plan(value, config.stage2, "stage2");
    else if (key == "dialogue") parse_dialogue(value, config.dialogue, "dialogue");
    else if (key == "stage2_gen") parse_stage2_gen(value, config.stage2_gen, "stage2_gen");
    else if (key == "eval") parse_eval(value, config.eval, "eval");
    else throw ConfigError("unknown config key: " + key);
  }
  config.stage1.stage = 1;
  config.stage2.stage = 2;
  return config;
}

RunConfig load_run_config(const std::string& path) {
  return config_from_json_text(read_file(path));
}

std::string config_to_json_text(const RunConfig& config) {
  ordered_json doc = ordered_json::object();
  doc["seed"] = config.seed;

  ordered_json paths = ordered_json::object();
  paths["corpus"] = config.paths.corpus;
  paths["shards"] = config.paths.shards;
  paths["out"] = config.paths.out;
  paths["checkpoint"] = config.paths.checkpoint;
  doc["paths"] = std::move(paths);

  ordered_json model = ordered_json::object();
  model["d_model"] = config.model.d_model;
  model["n_layers"] = config.model.n_layers;
  model["n_heads"] = config.model.n_heads;
  model["image_size"] = config.model.image_size;
  model["patch_size"] = config.model.patch_size;
  model["max_seq_len"] = config.model.max_seq_len;
  model["ff_mult"] = config.model.ff_mult;
  model["proj_dims"] = config.model.proj_dims;
  model["head_dims"] = config.model.head_dims;
  model["lora_rank"] = config.model.lora_rank;
  model["lora_alpha"] = config.model.lora_alpha;
  model["lora_dropout"] = config.model.lora_dropout;
  model["mask_decode_dim"] = config.model.mask_decode_dim;
  doc["model"] = std::move(model);

  doc["loss_profile"] = config.loss_profile;
  ordered_json loss = ordered_json::object();
  loss["lambda_txt"] = config.loss.lambda_txt;
  loss["lambda_nutrition"] = config.loss.lambda_nutrition;
  loss["lambda_mask"] = config.loss.lambda_mask;
  loss["lambda_mae"] = config.loss.lambda_mae;
  loss["lambda_mse"] = config.loss.lambda_mse;
  loss["lambda_bce"] = config.loss.lambda_bce;
  loss["lambda_dice"] = config.loss.lambda_dice;
  doc["loss"] = std::move(loss);

  ordered_json policy = ordered_json::object();
  policy["one_to_zero_rate"] = config.refer_policy.one_to_zero_rate;
  policy["absent_count_ratio"] = config.refer_policy.absent_count_ratio;
  policy["max_refer"] = config.refer_policy.max_refer;
  policy["max_absent"] = config.refer_policy.max_absent;
  policy["allow_hybrid"] = config.refer_policy.allow_hybrid;
  policy["segall_template_prob"] = config.refer_policy.segall_template_prob;
  policy["masks_complete"] = config.refer_policy.masks_complete;
  doc["refer_policy"] = std::move(policy);

  doc["stage1"] = stage_plan_json(config.stage1);
  doc["stage2"] = stage_plan_json(config.stage2);

  ordered_json dialogue = ordered_json::object();
  dialogue["dialogue_bands"] = bands_json(config.dialogue.dialogue_bands);
  dialogue["reasonseg_bands"] = bands_json(config.dialogue.reasonseg_bands);
  doc["dialogue"] = std::move(dialogue);

  ordered_json gen = ordered_json::object();
  gen["max_retries"] = config.stage2_gen.max_retries;
  gen["use_env_backend"] = config.stage2_gen.use_env_backend;
  doc["stage2_gen"] = std::move(gen);

  ordered_json eval = ordered_json::object();
  eval["max_new_tokens"] = config.eval.max_new_tokens;
  eval["report_basename"] = config.eval.report_basename;
  doc["eval"] = std::move(eval);

  return doc.dump(2) + "\n";
}

}  // namespace umami
