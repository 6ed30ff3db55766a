#include "umami/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <set>

#include "umami/common.hpp"
#include "umami/imageio.hpp"

namespace umami {

using ag::Tensor;

// ---- optimizer -----------------------------------------------------------------

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("optimizer: betas must lie in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
  if (warmup_steps < 0) throw ConfigError("optimizer: warmup_steps must be >= 0");
  if (!(grad_clip > 0.0)) throw ConfigError("optimizer: grad_clip must be positive");
}

double lr_at(const OptimizerConfig& opt, long step, long total_steps) {
  if (opt.warmup_steps > 0 && step < opt.warmup_steps)
    return opt.lr * static_cast<double>(step + 1) / static_cast<double>(opt.warmup_steps);
  if (total_steps <= opt.warmup_steps) return opt.lr;
  double remaining = static_cast<double>(total_steps - step);
  double window = static_cast<double>(total_steps - opt.warmup_steps);
  return opt.lr * remaining / window;
}

AdamW::AdamW(OptimizerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void AdamW::step(FoodModel& model, const std::map<std::string, Tensor>& grads, double lr_now) {
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, g] : grads) {
    Param& p = model.params().at(name);
    if (!p.trainable) throw ConfigError("gradient for frozen parameter " + name);
    if (p.value.shape != g.shape) throw ConfigError("gradient shape mismatch for " + name);
    auto mit = m_.find(name);
    if (mit == m_.end()) {
      mit = m_.emplace(name, Tensor::zeros(g.shape)).first;
      v_.emplace(name, Tensor::zeros(g.shape));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    for (long i = 0; i < g.numel(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      double mhat = m[i] / bc1;
      double vhat = v[i] / bc2;
      p.value[i] -= lr_now * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.value[i]);
    }
  }
}

// ---- shards -----------------------------------------------------------------------

void ShardRegistry::add(std::string dataset, TaskTag task, std::vector<Conversation> items) {
  auto& bucket = shards_[std::move(dataset)][task];
  bucket.insert(bucket.end(), std::make_move_iterator(items.begin()),
                std::make_move_iterator(items.end()));
}

const std::vector<Conversation>* ShardRegistry::find(const std::string& dataset,
                                                     TaskTag task) const {
  auto it = shards_.find(dataset);
  if (it == shards_.end()) return nullptr;
  auto jt = it->second.find(task);
  return jt == it->second.end() ? nullptr : &jt->second;
}

std::vector<TaskTag> ShardRegistry::tasks_of(const std::string& dataset) const {
  std::vector<TaskTag> out;
  auto it = shards_.find(dataset);
  if (it == shards_.end()) return out;
  for (const auto& [task, items] : it->second) out.push_back(task);
  return out;
}

std::vector<std::string> ShardRegistry::datasets() const {
  std::vector<std::string> out;
  for (const auto& [name, tasks] : shards_) out.push_back(name);
  return out;
}

// ---- plans -------------------------------------------------------------------------

StagePlan StagePlan::stage1_defaults() {
  StagePlan p;
  p.stage = 1;
  p.task_ratios = {{"vqa", 2.0}, {"nutrition", 1.0}, {"segmentation", 1.0}};
  p.dataset_weights = {
      {"vireo", 5.0}, {"recipe1m", 15.0}, {"nutrition5k", 10.0}, {"foodseg", 6.0}, {"uec", 4.0}};
  p.batch_size = 4;
  return p;
}

StagePlan StagePlan::stage2_defaults() {
  StagePlan p;
  p.stage = 2;
  p.dataset_weights = {{"vireo", 5.0},   {"recipe1m", 10.0},     {"nutrition5k", 10.0},
                       {"foodseg", 6.0}, {"uec", 4.0},           {"fooddialogues", 45.0},
                       {"foodreasonseg", 30.0}};
  p.generated_weight = 15.0;
  p.public_weight = 7.0;
  p.batch_size = 2;
  return p;
}

StagePlan StagePlan::single_task(const std::string& ratio_key) {
  StagePlan p;
  p.stage = 1;
  p.task_ratios = {{ratio_key, 1.0}};
  return p;
}

void StagePlan::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("plan: stage must be 1 or 2");
  for (const auto& [key, ratio] : task_ratios)
    if (!(ratio > 0.0)) throw ConfigError("plan: task ratio for " + key + " must be positive");
  for (const auto& [key, w] : dataset_weights)
    if (!(w > 0.0)) throw ConfigError("plan: dataset weight for " + key + " must be positive");
  if (stage == 2 && task_ratios.empty()) {
    if (!(generated_weight > 0.0) || !(public_weight > 0.0))
      throw ConfigError("plan: stage-2 replay weights must be positive");
  }
  if (stage == 1 && task_ratios.empty()) throw ConfigError("plan: stage 1 needs task ratios");
  if (batch_size < 1) throw ConfigError("plan: batch_size must be >= 1");
  if (steps < 0) throw ConfigError("plan: steps must be >= 0");
  if (checkpoint_every < 0) throw ConfigError("plan: checkpoint_every must be >= 0");
  optim.validate();
}

namespace {

const std::map<std::string, std::vector<TaskTag>>& category_tags() {
  static const std::map<std::string, std::vector<TaskTag>> table = {
      {"vqa", {TaskTag::classification, TaskTag::ingredient, TaskTag::recipe}},
      {"nutrition", {TaskTag::nutrition}},
      {"segmentation", {TaskTag::segmentation}},
      {"dialogue", {TaskTag::dialogue}},
      {"reason_seg", {TaskTag::reason_seg}},
  };
  return table;
}

std::vector<const Conversation*> collect_items(const ShardRegistry& registry,
                                               const std::string& dataset,
                                               const std::vector<TaskTag>& tags) {
  std::vector<const Conversation*> items;
  for (TaskTag tag : tags) {
    const auto* shard = registry.find(dataset, tag);
    if (!shard) continue;
    for (const auto& conv : *shard) items.push_back(&conv);
  }
  return items;
}

SamplerCategory build_category(const std::string& name, double weight,
                               const std::vector<TaskTag>& tags, const ShardRegistry& registry,
                               const std::map<std::string, double>& dataset_weights) {
  SamplerCategory cat;
  cat.name = name;
  cat.weight = weight;
  std::vector<std::pair<std::string, double>> datasets;
  if (dataset_weights.empty()) {
    for (const auto& ds : registry.datasets()) datasets.emplace_back(ds, 1.0);
  } else {
    datasets.assign(dataset_weights.begin(), dataset_weights.end());
  }
  for (const auto& [ds, w] : datasets) {
    auto items = collect_items(registry, ds, tags);
    if (items.empty()) continue;
    cat.entries.push_back({ds, w, std::move(items)});
  }
  if (cat.entries.empty())
    throw ConfigError("no shards available for sampling category " + name);
  return cat;
}

}  // namespace

SamplerPlan make_sampler_plan(const StagePlan& plan, const ShardRegistry& registry) {
  plan.validate();
  SamplerPlan out;
  if (plan.stage == 2 && plan.task_ratios.empty()) {
    static const std::vector<TaskTag> generated_tags = {TaskTag::dialogue, TaskTag::reason_seg};
    static const std::vector<TaskTag> public_tags = {TaskTag::classification, TaskTag::ingredient,
                                                     TaskTag::recipe, TaskTag::nutrition,
                                                     TaskTag::segmentation};
    out.categories.push_back(build_category("generated", plan.generated_weight, generated_tags,
                                            registry, plan.dataset_weights));
    out.categories.push_back(
        build_category("public", plan.public_weight, public_tags, registry, plan.dataset_weights));
    return out;
  }
  for (const auto& [key, ratio] : plan.task_ratios) {
    auto it = category_tags().find(key);
    if (it == category_tags().end()) throw ConfigError("unknown task category " + key);
    out.categories.push_back(
        build_category(key, ratio, it->second, registry, plan.dataset_weights));
  }
  return out;
}

Sampler::Sampler(SamplerPlan plan, std::uint64_t seed) : plan_(std::move(plan)), seed_(seed) {
  if (plan_.categories.empty()) throw ConfigError("sampler plan has no categories");
}

SampledItem Sampler::draw(long t) const {
  auto rng = make_rng(derive_seed(seed_, static_cast<std::uint64_t>(t)));
  std::vector<double> cw;
  cw.reserve(plan_.categories.size());
  for (const auto& c : plan_.categories) cw.push_back(c.weight);
  const SamplerCategory& cat = plan_.categories[next_weighted(rng, cw)];
  std::vector<double> ew;
  ew.reserve(cat.entries.size());
  for (const auto& e : cat.entries) ew.push_back(e.weight);
  const SamplerEntry& entry = cat.entries[next_weighted(rng, ew)];
  const Conversation* conv = entry.items[next_index(rng, entry.items.size())];
  return {conv, &cat, &entry};
}

// ---- training --------------------------------------------------------------------

PreparedSample prepare_sample(const FoodModel& model, const Conversation& conv,
                              const std::string& image_root) {
  PreparedSample s{render_for_training(conv, model.vocabulary()), Tensor(), {}};
  if (!s.rendered.image) throw DataError("conversation " + conv.source_record + " has no image");
  std::string path = s.rendered.image->path;
  if (!image_root.empty() && !path.empty() && path.front() != '/')
    path = image_root + "/" + path;
  RgbImage img = read_image_ppm(path);
  if (img.height != model.config().image_size || img.width != model.config().image_size)
    throw DataError("image " + path + " does not match the model image size");
  s.visual = model.encode_image(image_to_tensor(img));
  for (const auto& site : s.rendered.sites) s.site_positions.push_back(site.text_pos);
  return s;
}

TrainStepResult train_step(FoodModel& model, const std::vector<const PreparedSample*>& batch,
                           const LossWeights& weights, AdamW& opt, double lr_now,
                           std::uint64_t step_seed) {
  if (batch.empty()) throw DataError("train_step: empty batch");
  ag::Tape tape;
  ParamBinding binding = model.bind(tape);
  std::vector<SampleLossGraph> losses;
  TrainStepResult res;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PreparedSample& s = *batch[i];
    ForwardOptions opts;
    opts.training = true;
    opts.dropout_seed = derive_seed(step_seed, static_cast<std::uint64_t>(i));
    GraphOutput g = model.forward_graph(tape, binding, s.visual, s.rendered.ids,
                                        s.site_positions, opts);
    losses.push_back(sample_losses(tape, g, s.rendered, weights, model.config().image_size,
                                   model.config().patch_size));
    res.tasks.push_back(s.rendered.task_tag);
  }
  BatchLossGraph bg = combine_batch(tape, losses, weights);
  res.breakdown = bg.values(tape);
  if (!std::isfinite(res.breakdown.total))
    throw NumericError("non-finite loss: " + res.breakdown.log_fields());
  tape.backward(bg.total);

  std::map<std::string, Tensor> grads;
  double sumsq = 0.0;
  for (const auto& name : model.params().names()) {
    if (!model.params().at(name).trainable) continue;
    Tensor g = tape.grad(binding.at(name));
    for (long i = 0; i < g.numel(); ++i) {
      if (!std::isfinite(g[i]))
        throw NumericError("non-finite gradient in " + name + " at step with " +
                           res.breakdown.log_fields());
      sumsq += g[i] * g[i];
    }
    grads.emplace(name, std::move(g));
  }
  res.grad_norm = std::sqrt(sumsq);
  double clip = opt.config().grad_clip;
  if (res.grad_norm > clip) {
    double scale = clip / res.grad_norm;
    for (auto& [name, g] : grads)
      for (long i = 0; i < g.numel(); ++i) g[i] *= scale;
  }
  opt.step(model, grads, lr_now);
  return res;
}

namespace {

std::string step_log_line(long step, const TrainStepResult& res, double lr_now) {
  std::string tasks;
  for (std::size_t i = 0; i < res.tasks.size(); ++i) {
    if (i) tasks += ",";
    tasks += task_tag_name(res.tasks[i]);
  }
  return "step=" + std::to_string(step) + " " + res.breakdown.log_fields() +
         " grad_norm=" + format_double(res.grad_norm) + " lr=" + format_double(lr_now) +
         " tasks=" + tasks;
}

// Shared driver for run_stage and the overfit harness.
std::vector<std::string> training_loop(FoodModel& model, const Sampler& sampler,
                                       const LossWeights& weights, const OptimizerConfig& optim,
                                       long batch_size, long steps, const std::string& image_root,
                                       std::uint64_t seed,
                                       const std::function<void(long)>& on_step) {
  weights.validate();
  AdamW opt(optim);
  std::map<const Conversation*, PreparedSample> cache;
  std::uint64_t step_root = derive_seed(seed, "step");
  std::vector<std::string> lines;
  for (long step = 0; step < steps; ++step) {
    std::vector<const PreparedSample*> batch;
    for (long b = 0; b < batch_size; ++b) {
      SampledItem item = sampler.draw(step * batch_size + b);
      auto it = cache.find(item.conv);
      if (it == cache.end())
        it = cache.emplace(item.conv, prepare_sample(model, *item.conv, image_root)).first;
      batch.push_back(&it->second);
    }
    double lr_now = lr_at(optim, step, steps);
    TrainStepResult res;
    try {
      res = train_step(model, batch, weights, opt, lr_now,
                       derive_seed(step_root, static_cast<std::uint64_t>(step)));
    } catch (const NumericError& e) {
      throw NumericError(std::string(e.what()) + " (step " + std::to_string(step + 1) + ")");
    }
    lines.push_back(step_log_line(step + 1, res, lr_now));
    if (on_step) on_step(step + 1);
  }
  return lines;
}

}  // namespace

StageResult run_stage(FoodModel& model, const StagePlan& plan, const ShardRegistry& registry,
                      const LossWeights& weights, const std::string& out_dir,
                      const std::string& image_root, std::uint64_t seed) {
  plan.validate();
  std::filesystem::create_directories(out_dir);
  Sampler sampler(make_sampler_plan(plan, registry), derive_seed(seed, "sampler"));
  std::string prefix = out_dir + "/stage" + std::to_string(plan.stage);
  auto on_step = [&](long step) {
    if (plan.checkpoint_every > 0 && step % plan.checkpoint_every == 0 && step != plan.steps)
      model.save(prefix + "_step" + std::to_string(step) + ".ckpt");
  };
  StageResult result;
  result.log_lines = training_loop(model, sampler, weights, plan.optim, plan.batch_size,
                                   plan.steps, image_root, seed, on_step);
  result.final_checkpoint = prefix + "_final.ckpt";
  model.save(result.final_checkpoint);
  std::string log;
  for (const auto& line : result.log_lines) log += line + "\n";
  write_file_atomic(prefix + "_train.log", log);
  return result;
}

// ---- overfit harness -----------------------------------------------------------------

FitReport evaluate_fit(const FoodModel& model, const std::vector<Conversation>& corpus,
                       const std::string& image_root) {
  FitReport report;
  double iou_sum = 0.0;
  double err_sum = 0.0, target_sum = 0.0;
  long matched = 0;
  for (const auto& conv : corpus) {
    PreparedSample s = prepare_sample(model, conv, image_root);
    ModelOutput out = model.forward(s.visual, s.rendered.ids, s.site_positions);

    std::map<long, const TaskTokenSite*> sites;
    for (const auto& site : s.rendered.sites) sites[site.text_pos] = &site;

    for (const auto& mp : out.mask_predictions) {
      const auto& label = std::get<MaskImage>(sites.at(mp.position)->label);
      long inter = 0, uni = 0;
      for (long r = 0; r < label.height; ++r)
        for (long c = 0; c < label.width; ++c) {
          bool pred = mp.probabilities.at(r, c) >= 0.5;
          bool truth = label.values[static_cast<std::size_t>(r * label.width + c)] != 0;
          inter += pred && truth;
          uni += pred || truth;
        }
      iou_sum += uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
      ++report.mask_sites;
    }
    for (const auto& np : out.nutrition_predictions) {
      double target = std::get<double>(sites.at(np.position)->label);
      err_sum += std::abs(std::expm1(np.value) - target);
      target_sum += target;
      ++report.nutrition_values;
    }
    for (auto [b, e] : s.rendered.loss_spans) {
      std::vector<long> prompt(s.rendered.ids.begin(), s.rendered.ids.begin() + b);
      std::vector<long> gen =
          model.generate(s.visual, prompt, static_cast<int>(e - b) + 8);
      bool match = gen.size() == static_cast<std::size_t>(e - b) &&
                   std::equal(gen.begin(), gen.end(), s.rendered.ids.begin() + b);
      matched += match;
      ++report.answers;
    }
  }
  if (report.mask_sites > 0) report.mask_iou = iou_sum / static_cast<double>(report.mask_sites);
  if (report.nutrition_values > 0) {
    if (!(target_sum > 0.0)) throw DataError("nutrition targets sum to zero");
    report.nutrition_mae_pct = err_sum / target_sum * 100.0;
  }
  if (report.answers > 0)
    report.exact_match = static_cast<double>(matched) / static_cast<double>(report.answers);
  return report;
}

FitReport overfit_harness(FoodModel& model, const std::vector<Conversation>& corpus,
                          long budget_steps, const LossWeights& weights,
                          const OptimizerConfig& optim, long batch_size,
                          const std::string& image_root, std::uint64_t seed) {
  if (corpus.empty()) throw DataError("overfit harness needs a corpus");
  if (budget_steps > 0) {
    SamplerPlan plan;
    SamplerCategory cat;
    cat.name = "all";
    cat.weight = 1.0;
    SamplerEntry entry;
    entry.dataset = "corpus";
    entry.weight = 1.0;
    for (const auto& conv : corpus) entry.items.push_back(&conv);
    cat.entries.push_back(std::move(entry));
    plan.categories.push_back(std::move(cat));
    Sampler sampler(std::move(plan), derive_seed(seed, "sampler"));
    training_loop(model, sampler, weights, optim, batch_size, budget_steps, image_root, seed,
                  nullptr);
  }
  FitReport report = evaluate_fit(model, corpus, image_root);
  report.steps = budget_steps;
  return report;
}

}  // namespace umami
