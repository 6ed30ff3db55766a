#include "umami/instruction_forge.hpp"

#include <algorithm>
#include <set>

#include "umami/common.hpp"

namespace umami {

using forge::TemplateBank;
using forge::format_clause_list;
using forge::format_name_list;
using forge::is_are;
using forge::render_template;

void ReferMixPolicy::validate() const {
  if (one_to_zero_rate < 0.0 || one_to_zero_rate > 1.0)
    throw ConfigError("refer policy: one_to_zero_rate must lie in [0,1]");
  if (segall_template_prob < 0.0 || segall_template_prob > 1.0)
    throw ConfigError("refer policy: segall_template_prob must lie in [0,1]");
  if (max_refer < 1) throw ConfigError("refer policy: max_refer must be >= 1");
  if (max_absent < 1) throw ConfigError("refer policy: max_absent must be >= 1");
  if (absent_count_ratio.empty()) throw ConfigError("refer policy: absent_count_ratio is empty");
  int sum = 0;
  for (int w : absent_count_ratio) {
    if (w < 0) throw ConfigError("refer policy: absent_count_ratio entries must be >= 0");
    sum += w;
  }
  if (sum == 0) throw ConfigError("refer policy: absent_count_ratio sums to zero");
}

void ForgeStats::merge(const ForgeStats& other) {
  for (const auto& [k, v] : other.template_usage) template_usage[k] += v;
  conversations += other.conversations;
  one_to_zero += other.one_to_zero;
  hybrid += other.hybrid;
  segment_all += other.segment_all;
  for (const auto& [k, v] : other.refer_counts) refer_counts[k] += v;
  for (const auto& [k, v] : other.absent_counts) absent_counts[k] += v;
}

ImageHandle select_visual(const FoodRecord& record, std::uint64_t seed) {
  const ImageHandle* overhead = record.overhead();
  if (!overhead) throw DataError("record " + record.record_id + " has no overhead image");
  auto frames = record.frames();
  if (frames.empty()) return *overhead;
  auto rng = make_rng(seed);
  if (next_unit(rng) < 0.7) return *overhead;
  return *frames[next_index(rng, frames.size())];
}

namespace {

const std::string& pick(std::mt19937_64& rng, const std::vector<std::string>& pool, const std::string& slot,
                        ForgeStats* stats) {
  const auto& chosen = pool[next_index(rng, pool.size())];
  if (stats) stats->template_usage[slot] += 1;
  return chosen;
}

Conversation shell(const FoodRecord& record, TaskTag tag, std::uint64_t seed) {
  Conversation conv;
  conv.task_tag = tag;
  conv.source_record = record.record_id;
  conv.turns.resize(3);
  conv.turns[0].speaker = Speaker::system;
  conv.turns[0].text = TemplateBank::builtin().system_message;
  conv.turns[1].speaker = Speaker::user;
  conv.turns[1].images = {select_visual(record, derive_seed(seed, "visual"))};
  conv.turns[2].speaker = Speaker::assistant;
  return conv;
}

std::string surface(NutritionField field, int index) {
  return token_surface(TaskToken::ingredient(field, index));
}

const NutritionFacts& facts_of(const FoodRecord& record, const IngredientEntry& entry) {
  if (!entry.facts)
    throw DataError("record " + record.record_id + ": ingredient '" + entry.name +
                    "' has no nutrition facts");
  return *entry.facts;
}

// Indices of ingredients that carry nutrition facts.
std::vector<std::size_t> fact_indices(const FoodRecord& record) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < record.ingredients.size(); ++i)
    if (record.ingredients[i].facts) out.push_back(i);
  return out;
}

std::vector<std::size_t> mask_indices(const FoodRecord& record) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < record.ingredients.size(); ++i)
    if (record.ingredients[i].mask) out.push_back(i);
  return out;
}

// Draws a subset of `pool` of size k and returns it in record order.
std::vector<std::size_t> draw_subset(std::mt19937_64& rng, const std::vector<std::size_t>& pool,
                                     std::size_t k) {
  auto chosen = sample_without_replacement(rng, pool.size(), k);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (auto c : chosen) out.push_back(pool[c]);
  std::sort(out.begin(), out.end());
  return out;
}

// Expands the per-ingredient calorie clause for each chosen ingredient, tagging
// mass/cal tokens with consecutive indices starting at `first_index`.
std::string calorie_clauses(const FoodRecord& record, const std::vector<std::size_t>& chosen,
                            int first_index, std::map<TaskToken, TokenLabel>& labels) {
  std::vector<std::string> clauses;
  int idx = first_index;
  for (auto i : chosen) {
    const auto& entry = record.ingredients[i];
    const auto& facts = facts_of(record, entry);
    clauses.push_back(render_template(TemplateBank::builtin().sub_ingredient_calories,
                                      {{"name", entry.name},
                                       {"mass_token", surface(NutritionField::mass, idx)},
                                       {"cal_token", surface(NutritionField::cal, idx)}}));
    labels[TaskToken::ingredient(NutritionField::mass, idx)] = facts.mass;
    labels[TaskToken::ingredient(NutritionField::cal, idx)] = facts.calories;
    ++idx;
  }
  return format_clause_list(clauses);
}

std::string nutrition_clauses(const FoodRecord& record, const std::vector<std::size_t>& chosen,
                              int first_index, std::map<TaskToken, TokenLabel>& labels) {
  std::vector<std::string> clauses;
  int idx = first_index;
  for (auto i : chosen) {
    const auto& entry = record.ingredients[i];
    const auto& facts = facts_of(record, entry);
    clauses.push_back(render_template(TemplateBank::builtin().sub_ingredient_nutrition,
                                      {{"name", entry.name},
                                       {"mass_token", surface(NutritionField::mass, idx)},
                                       {"cal_token", surface(NutritionField::cal, idx)},
                                       {"fat_token", surface(NutritionField::fat, idx)},
                                       {"carb_token", surface(NutritionField::carb, idx)},
                                       {"pro_token", surface(NutritionField::pro, idx)}}));
    labels[TaskToken::ingredient(NutritionField::mass, idx)] = facts.mass;
    labels[TaskToken::ingredient(NutritionField::cal, idx)] = facts.calories;
    labels[TaskToken::ingredient(NutritionField::fat, idx)] = facts.fat;
    labels[TaskToken::ingredient(NutritionField::carb, idx)] = facts.carbohydrate;
    labels[TaskToken::ingredient(NutritionField::pro, idx)] = facts.protein;
    ++idx;
  }
  return format_clause_list(clauses);
}

const NutritionFacts& total_of(const FoodRecord& record) {
  if (!record.total)
    throw DataError("record " + record.record_id + " has no dish-level nutrition facts");
  return *record.total;
}

std::string total_clause(const FoodRecord& record, std::map<TaskToken, TokenLabel>& labels) {
  const auto& total = total_of(record);
  std::map<std::string, std::string> values;
  for (auto field : kNutritionFields) {
    TaskToken tok = TaskToken::dish(field);
    values["total_" + std::string(field_name(field)) + "_token"] = token_surface(tok);
    labels[tok] = field_value(total, field);
  }
  return render_template(TemplateBank::builtin().sub_total_nutrition, values);
}

// Macro-nutrients ordered by gram amount, descending; ties keep the canonical
// fat, carbohydrate, protein order.
std::vector<std::string> rank_macros(const NutritionFacts& facts) {
  std::vector<std::pair<std::string, double>> macros = {
      {"fat", facts.fat}, {"carbohydrate", facts.carbohydrate}, {"protein", facts.protein}};
  std::stable_sort(macros.begin(), macros.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> names;
  for (const auto& [name, grams] : macros) names.push_back(name);
  return names;
}

std::vector<std::string> names_at(const FoodRecord& record, const std::vector<std::size_t>& idx) {
  std::vector<std::string> names;
  names.reserve(idx.size());
  for (auto i : idx) names.push_back(record.ingredients[i].name);
  return names;
}

}  // namespace

Conversation build_classification(const FoodRecord& record, const TemplateBank& bank,
                                  std::uint64_t seed, ForgeStats* stats) {
  if (!record.class_label)
    throw DataError("record " + record.record_id + " has no class label");
  auto rng = make_rng(derive_seed(seed, "classification"));
  Conversation conv = shell(record, TaskTag::classification, seed);
  conv.turns[1].text = pick(rng, bank.classification_queries, "classification_queries", stats);
  conv.turns[2].text = render_template(
      pick(rng, bank.classification_answers, "classification_answers", stats),
      {{"class_name", *record.class_label}});
  if (stats) stats->conversations += 1;
  return conv;
}

Conversation build_ingredient(const FoodRecord& record, const TemplateBank& bank,
                              std::uint64_t seed, ForgeStats* stats) {
  if (record.ingredients.empty())
    throw DataError("record " + record.record_id + " has no ingredients");
  auto rng = make_rng(derive_seed(seed, "ingredient"));
  std::vector<std::string> names;
  for (const auto& entry : record.ingredients) names.push_back(entry.name);
  Conversation conv = shell(record, TaskTag::ingredient, seed);
  conv.turns[1].text = pick(rng, bank.ingredient_queries, "ingredient_queries", stats);
  conv.turns[2].text =
      render_template(pick(rng, bank.ingredient_answers, "ingredient_answers", stats),
                      {{"ingredient_list", join(names, ", ")}});
  if (stats) stats->conversations += 1;
  return conv;
}

Conversation build_recipe(const FoodRecord& record, const TemplateBank& bank, std::uint64_t seed,
                          ForgeStats* stats) {
  if (!record.recipe || record.recipe->empty())
    throw DataError("record " + record.record_id + " has no recipe text");
  auto rng = make_rng(derive_seed(seed, "recipe"));
  Conversation conv = shell(record, TaskTag::recipe, seed);
  conv.turns[1].text = pick(rng, bank.recipe_queries, "recipe_queries", stats);
  conv.turns[2].text = *record.recipe;  // recipe answers are verbatim ground truth
  if (stats) stats->conversations += 1;
  return conv;
}

Conversation build_nutrition(const FoodRecord& record, int pattern, const TemplateBank& bank,
                             std::uint64_t seed, ForgeStats* stats) {
  if (pattern < 1 || pattern > 7)
    throw ConfigError("nutrition pattern must lie in 1..7, got " + std::to_string(pattern));
  auto rng = make_rng(derive_seed(seed, "nutrition"));
  const auto& slot_q = "nutrition" + std::to_string(pattern) + "_queries";
  const auto& slot_a = "nutrition" + std::to_string(pattern) + "_answers";
  const auto& pat = bank.nutrition[pattern - 1];

  Conversation conv = shell(record, TaskTag::nutrition, seed);
  auto& labels = conv.turns[2].token_labels;
  std::map<std::string, std::string> qv, av;

  switch (pattern) {
    case 1: {  // dish calories + per-ingredient calories
      if (record.ingredients.empty())
        throw DataError("record " + record.record_id + " has no ingredients");
      std::vector<std::size_t> all(record.ingredients.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      av["ingredient_calories_list"] = calorie_clauses(record, all, 1, labels);
      TaskToken cal = TaskToken::dish(NutritionField::cal);
      av["total_cal_token"] = token_surface(cal);
      labels[cal] = total_of(record).calories;
      break;
    }
    case 2: {  // calories of a chosen subset
      auto pool = fact_indices(record);
      if (pool.empty())
        throw DataError("record " + record.record_id + " has no ingredient with nutrition facts");
      std::size_t k = 1 + next_index(rng, pool.size());
      auto chosen = draw_subset(rng, pool, k);
      auto names = names_at(record, chosen);
      qv["ing_names"] = format_name_list(names);
      qv["is_are"] = is_are(names.size());
      av["ingredient_calories_list"] = calorie_clauses(record, chosen, 1, labels);
      break;
    }
    case 3: {  // full nutrition, dish + every ingredient
      if (record.ingredients.empty())
        throw DataError("record " + record.record_id + " has no ingredients");
      std::vector<std::size_t> all(record.ingredients.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
      av["total_nutrition"] = total_clause(record, labels);
      av["ingredient_nutrition_list"] = nutrition_clauses(record, all, 1, labels);
      break;
    }
    case 4: {  // full nutrition of a chosen subset
      auto pool = fact_indices(record);
      if (pool.empty())
        throw DataError("record " + record.record_id + " has no ingredient with nutrition facts");
      std::size_t k = 1 + next_index(rng, pool.size());
      auto chosen = draw_subset(rng, pool, k);
      auto names = names_at(record, chosen);
      qv["ing_names"] = format_name_list(names);
      qv["is_are"] = is_are(names.size());
      av["ingredient_nutrition_list"] = nutrition_clauses(record, chosen, 1, labels);
      break;
    }
    case 5: {  // dish totals only
      av["total_nutrition"] = total_clause(record, labels);
      break;
    }
    case 6: {  // dominant macro-nutrient (plain text, no regression targets)
      av["macronutrient"] = rank_macros(total_of(record))[0];
      break;
    }
    case 7: {  // macro-nutrients ranked
      auto ranked = rank_macros(total_of(record));
      av["macronutrient1"] = ranked[0];
      av["macronutrient2"] = ranked[1];
      av["macronutrient3"] = ranked[2];
      break;
    }
  }

  conv.turns[1].text = render_template(pick(rng, pat.queries, slot_q, stats), qv);
  conv.turns[2].text = render_template(pick(rng, pat.answers, slot_a, stats), av);
  if (stats) stats->conversations += 1;
  return conv;
}

Conversation build_segmentation(const FoodRecord& record, const ReferMixPolicy& policy,
                                const std::vector<std::string>& absent_vocabulary,
                                const TemplateBank& bank, std::uint64_t seed, ForgeStats* stats) {
  policy.validate();
  auto masked = mask_indices(record);
  if (masked.empty())
    throw DataError("record " + record.record_id + " has no ingredient with a mask");
  auto rng = make_rng(derive_seed(seed, "segmentation"));

  // Names already present in the record can never act as absent distractors.
  std::set<std::string> present_canon;
  for (const auto& entry : record.ingredients) present_canon.insert(canon_name(entry.name));
  std::vector<std::string> absent_pool;
  for (const auto& name : absent_vocabulary)
    if (!present_canon.count(canon_name(name))) absent_pool.push_back(name);

  Conversation conv = shell(record, TaskTag::segmentation, seed);
  auto& labels = conv.turns[2].token_labels;

  bool one_to_zero = next_unit(rng) < policy.one_to_zero_rate && !absent_pool.empty();
  std::vector<std::string> absent_names;
  std::vector<std::size_t> referred;
  bool segment_all = false;

  if (one_to_zero) {
    std::vector<double> weights(policy.absent_count_ratio.begin(),
                                policy.absent_count_ratio.end());
    std::size_t count = next_weighted(rng, weights) + 1;
    count = std::min({count, static_cast<std::size_t>(policy.max_absent), absent_pool.size()});
    for (auto i : sample_without_replacement(rng, absent_pool.size(), count))
      absent_names.push_back(absent_pool[i]);
    bool hybrid = policy.allow_hybrid && next_unit(rng) < 0.5 &&
                  static_cast<int>(count) < policy.max_refer;
    if (hybrid) {
      std::size_t room = static_cast<std::size_t>(policy.max_refer) - count;
      std::size_t k = 1 + next_index(rng, std::min(masked.size(), room));
      referred = draw_subset(rng, masked, k);
      if (stats) stats->hybrid += 1;
    }
    if (stats) {
      stats->one_to_zero += 1;
      stats->absent_counts[static_cast<int>(count)] += 1;
    }
  } else {
    segment_all = policy.masks_complete &&
                  masked.size() <= static_cast<std::size_t>(policy.max_refer) &&
                  next_unit(rng) < policy.segall_template_prob;
    if (segment_all) {
      referred = masked;
      if (stats) stats->segment_all += 1;
    } else {
      std::size_t cap = std::min(masked.size(), static_cast<std::size_t>(policy.max_refer));
      std::size_t k = 1 + next_index(rng, cap);
      referred = draw_subset(rng, masked, k);
    }
  }
  if (stats) stats->refer_counts[static_cast<int>(referred.size())] += 1;

  // Query: segment-all has its own phrasing; otherwise list the requested
  // names, absent ones first so refusals line up with the question order.
  if (segment_all) {
    conv.turns[1].text = pick(rng, bank.seg_all_queries, "seg_all_queries", stats);
  } else {
    std::vector<std::string> query_names = absent_names;
    for (const auto& name : names_at(record, referred)) query_names.push_back(name);
    conv.turns[1].text =
        render_template(pick(rng, bank.seg_refer_queries, "seg_refer_queries", stats),
                        {{"ing_names", format_name_list(query_names)},
                         {"is_are", is_are(query_names.size())}});
  }

  // Answer: a refusal sentence for absent names, then mask assignments.
  std::vector<std::string> sentences;
  if (!absent_names.empty()) {
    sentences.push_back(
        render_template(pick(rng, bank.seg_refusal_answers, "seg_refusal_answers", stats),
                        {{"absent_names", format_name_list(absent_names)},
                         {"is_are", is_are(absent_names.size())}}));
  }
  if (!referred.empty()) {
    std::vector<std::string> clauses;
    int idx = 1;
    for (auto i : referred) {
      const auto& entry = record.ingredients[i];
      TaskToken tok = TaskToken::seg(idx);
      const auto& sub = idx == 1 ? bank.sub_seg_assign_first : bank.sub_seg_assign_rest;
      clauses.push_back(render_template(
          sub, {{"name", entry.name}, {"seg_token", token_surface(tok)}}));
      labels[tok] = *entry.mask;
      ++idx;
    }
    sentences.push_back(
        render_template(pick(rng, bank.seg_assign_answers, "seg_assign_answers", stats),
                        {{"assignments", format_clause_list(clauses)}}));
  }
  conv.turns[2].text = join(sentences, " ");
  if (stats) stats->conversations += 1;
  return conv;
}

}  // namespace umami
