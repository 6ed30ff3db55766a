#include "umami/templates.hpp"

#include <algorithm>
#include <cctype>
#include <json.hpp>
#include <set>

#include "umami/imageio.hpp"

namespace umami::forge {

using json = nlohmann::ordered_json;

namespace {

TemplateBank make_builtin() {
  TemplateBank b;
  b.system_message = "You are a helpful food analysis assistant.";

  b.classification_queries = {
      "What dish is shown in this image?",
      "Can you identify the food in this picture?",
      "What is the name of this dish?",
      "Which category of food does this image show?",
      "Please classify the dish in the photo.",
      "What food item appears in this image?",
      "Tell me the name of the dish pictured here.",
      "What kind of dish is presented in the picture?",
      "Identify the category of the food shown.",
      "What would you call the dish in this photo?",
  };
  b.classification_answers = {
      "This dish is {class_name}.",
      "The food in the image is {class_name}.",
      "It looks like {class_name}.",
      "The dish shown here is {class_name}.",
      "This is {class_name}.",
  };

  b.ingredient_queries = {
      "What ingredients are used in this dish?",
      "Can you list the ingredients shown in this image?",
      "Which ingredients does this food contain?",
      "Please identify the ingredients in the picture.",
      "What are the components of this dish?",
      "Tell me the ingredients of the food in this photo.",
      "What ingredients can you recognize in this image?",
      "List the ingredients present in this dish.",
  };
  b.ingredient_answers = {
      "The ingredients are {ingredient_list}.",
      "This dish contains {ingredient_list}.",
      "I can identify the following ingredients: {ingredient_list}.",
      "The ingredients in this dish are {ingredient_list}.",
      "This dish is made with {ingredient_list}.",
  };

  b.recipe_queries = {
      "Can you provide a recipe for this dish?",
      "How would I cook the dish shown in this image?",
      "Please give me the recipe for this food.",
      "What are the steps to prepare this dish?",
      "How is this dish made?",
      "Could you write a recipe for the food in the picture?",
      "Tell me how to make this dish.",
      "What is the recipe for the dish in this photo?",
      "Describe how to prepare the food shown here.",
      "Give me cooking instructions for this dish.",
      "How do I prepare this meal at home?",
  };

  // pattern 1: total calories + per-ingredient calories
  b.nutrition[0].queries = {
      "How many calories does this dish contain, and how many come from each ingredient?",
      "What is the total calorie content of this food, broken down by ingredient?",
      "Estimate the calories of this dish and of every ingredient in it.",
      "Can you give the overall calories along with the calories of each ingredient?",
      "How caloric is this meal? Please detail every ingredient.",
      "What are the total calories here, including a per-ingredient breakdown?",
      "Please estimate the calorie content of the whole dish and each component.",
      "Tell me the total calories of this dish and how each ingredient contributes.",
      "How many kilocalories are in this food, and in each of its ingredients?",
      "Break down the calorie content of this dish by ingredient, including the total.",
  };
  b.nutrition[0].answers = {
      "This dish provides about {total_cal_token} kilocalories in total. In detail, {ingredient_calories_list}.",
      "Overall, the food contains {total_cal_token} kilocalories. Specifically, {ingredient_calories_list}.",
      "The total comes to {total_cal_token} kilocalories. For each ingredient, {ingredient_calories_list}.",
      "I estimate {total_cal_token} kilocalories for the whole dish. Breaking it down, {ingredient_calories_list}.",
      "In total this meal has {total_cal_token} kilocalories. To be specific, {ingredient_calories_list}.",
      "The dish amounts to {total_cal_token} kilocalories altogether. Ingredient by ingredient, {ingredient_calories_list}.",
      "Altogether there are {total_cal_token} kilocalories. In particular, {ingredient_calories_list}.",
      "This food supplies {total_cal_token} kilocalories in total. Looking closer, {ingredient_calories_list}.",
      "My estimate is {total_cal_token} kilocalories overall. Per ingredient, {ingredient_calories_list}.",
      "The complete dish carries {total_cal_token} kilocalories. As a breakdown, {ingredient_calories_list}.",
  };

  // pattern 2: calories of chosen ingredients
  b.nutrition[1].queries = {
      "How many calories come from the {ing_names} in this dish?",
      "What is the calorie content of the {ing_names} shown here?",
      "Please estimate the calories provided by the {ing_names}.",
      "How many kilocalories do the {ing_names} in this food account for?",
      "Can you give the calorie count for the {ing_names}?",
      "How caloric {is_are} the {ing_names} in this picture?",
      "Estimate the energy content of the {ing_names} in this image.",
      "How much energy would I get from the {ing_names} in this dish?",
      "Give me the calories of the {ing_names}, please.",
      "Regarding the {ing_names}: how many calories {is_are} involved?",
  };
  b.nutrition[1].answers = {
      "Sure: {ingredient_calories_list}.",
      "In this dish, {ingredient_calories_list}.",
      "Based on the image, {ingredient_calories_list}.",
      "Here is the estimate: {ingredient_calories_list}.",
      "According to my analysis, {ingredient_calories_list}.",
      "For the ingredients you asked about, {ingredient_calories_list}.",
      "The breakdown is as follows: {ingredient_calories_list}.",
      "From what I can see, {ingredient_calories_list}.",
      "My estimate: {ingredient_calories_list}.",
      "As requested, {ingredient_calories_list}.",
  };

  // pattern 3: total nutrition + per-ingredient nutrition
  b.nutrition[2].queries = {
      "What is the full nutritional breakdown of this dish and all of its ingredients?",
      "Please give the total nutrition of this food and the nutrition of every ingredient.",
      "Can you analyze the complete nutritional content of this dish, ingredient by ingredient?",
      "Detail the nutrition facts for the whole dish and for each ingredient.",
      "What are the mass, calories and macro-nutrients of this dish and its components?",
      "Provide a complete nutritional profile of this meal, including every ingredient.",
      "How nutritious is this dish? Please cover the total and each ingredient.",
      "Report the nutritional values of this food overall and per ingredient.",
      "I want the full nutrition of this dish along with an ingredient-level breakdown.",
      "Give the dish's total nutrition and then the nutrition of each ingredient.",
  };
  b.nutrition[2].answers = {
      "Overall, {total_nutrition}. In detail, {ingredient_nutrition_list}.",
      "For the whole dish, {total_nutrition}. Per ingredient, {ingredient_nutrition_list}.",
      "In total, {total_nutrition}. Breaking it down, {ingredient_nutrition_list}.",
      "Summing everything, {total_nutrition}. Specifically, {ingredient_nutrition_list}.",
      "Altogether, {total_nutrition}. Ingredient by ingredient, {ingredient_nutrition_list}.",
      "As a whole, {total_nutrition}. Looking at each component, {ingredient_nutrition_list}.",
      "Taken together, {total_nutrition}. More precisely, {ingredient_nutrition_list}.",
      "Here is the full picture: {total_nutrition}. In particular, {ingredient_nutrition_list}.",
      "My analysis: {total_nutrition}. For the ingredients, {ingredient_nutrition_list}.",
      "To summarize, {total_nutrition}. At ingredient level, {ingredient_nutrition_list}.",
  };

  // pattern 4: nutrition of chosen ingredients
  b.nutrition[3].queries = {
      "What is the nutritional content of the {ing_names} in this dish?",
      "Please give the full nutrition facts for the {ing_names}.",
      "How nutritious {is_are} the {ing_names} shown in this image?",
      "Detail the mass, calories and macro-nutrients of the {ing_names}.",
      "Can you analyze the nutrition of the {ing_names} in this picture?",
      "Report the nutritional values of the {ing_names}, please.",
      "What do the {ing_names} contribute nutritionally to this dish?",
      "Give me a nutritional profile of the {ing_names}.",
      "I would like the nutrition facts of the {ing_names} in this food.",
      "Tell me the nutritional details of the {ing_names}.",
  };
  b.nutrition[3].answers = {
      "Certainly: {ingredient_nutrition_list}.",
      "In this dish, {ingredient_nutrition_list}.",
      "Based on the image, {ingredient_nutrition_list}.",
      "Here are the details: {ingredient_nutrition_list}.",
      "According to my analysis, {ingredient_nutrition_list}.",
      "For the ingredients you asked about, {ingredient_nutrition_list}.",
      "The nutrition facts are as follows: {ingredient_nutrition_list}.",
      "From what I can see, {ingredient_nutrition_list}.",
      "My estimate: {ingredient_nutrition_list}.",
      "As requested, {ingredient_nutrition_list}.",
  };

  // pattern 5: total nutrition only
  b.nutrition[4].queries = {
      "What is the total nutritional content of this dish?",
      "Please give the overall nutrition facts of this food.",
      "How many calories and macro-nutrients does this dish contain in total?",
      "Report the total mass, calories, fat, carbohydrates and protein of this meal.",
      "Can you estimate the complete nutrition of this dish as a whole?",
      "What are the overall nutrition facts for the food in this image?",
      "Give me the total nutritional values of this dish.",
      "How nutritious is this meal overall?",
      "Summarize the total nutrition of the dish in this picture.",
      "I want the whole-dish nutrition facts, please.",
  };
  b.nutrition[4].answers = {
      "Overall, {total_nutrition}.",
      "In total, {total_nutrition}.",
      "For the whole dish, {total_nutrition}.",
      "Altogether, {total_nutrition}.",
      "As a whole, {total_nutrition}.",
      "Based on the image, {total_nutrition}.",
      "According to my analysis, {total_nutrition}.",
      "Here is the summary: {total_nutrition}.",
      "My estimate: {total_nutrition}.",
      "Taken together, {total_nutrition}.",
      "From what I can see, {total_nutrition}.",
      "To summarize, {total_nutrition}.",
  };

  // pattern 6: most abundant macro-nutrient
  b.nutrition[5].queries = {
      "Which macro-nutrient is the most abundant in this dish?",
      "What is the dominant macro-nutrient of this food?",
      "Among fat, carbohydrate and protein, which does this dish contain the most of?",
      "Tell me the highest macro-nutrient in this meal.",
      "Which macro-nutrient leads by mass in this dish?",
      "What macro-nutrient is this food richest in?",
      "By weight, which macro-nutrient tops this dish?",
  };
  b.nutrition[5].answers = {
      "The most abundant macro-nutrient in this dish is {macronutrient}.",
      "This food is richest in {macronutrient}.",
      "By mass, {macronutrient} leads in this dish.",
      "The dominant macro-nutrient here is {macronutrient}.",
      "It contains more {macronutrient} than anything else.",
      "Among the three macro-nutrients, {macronutrient} ranks first.",
      "The highest macro-nutrient of this meal is {macronutrient}.",
      "That would be {macronutrient}.",
  };

  // pattern 7: macro-nutrients ranked
  b.nutrition[6].queries = {
      "Rank the macro-nutrients of this dish from highest to lowest.",
      "Order fat, carbohydrate and protein in this food by amount.",
      "What is the macro-nutrient ranking of this dish?",
      "List this meal's macro-nutrients in descending order.",
      "From most to least, how do the macro-nutrients of this dish rank?",
      "Sort the macro-nutrients of the food in this image by mass.",
      "Which macro-nutrients does this dish contain, ranked from most to least?",
  };
  b.nutrition[6].answers = {
      "Ranked by mass, this dish contains {macronutrient1} first, then {macronutrient2}, and finally {macronutrient3}.",
      "The order is {macronutrient1}, {macronutrient2}, then {macronutrient3}.",
      "From most to least: {macronutrient1}, {macronutrient2}, {macronutrient3}.",
      "It has the most {macronutrient1}, followed by {macronutrient2} and then {macronutrient3}.",
      "{Macronutrient1} ranks first, {macronutrient2} second, and {macronutrient3} third.",
      "The ranking is: {macronutrient1} > {macronutrient2} > {macronutrient3}.",
      "In descending order this dish holds {macronutrient1}, {macronutrient2} and {macronutrient3}.",
      "Most abundant is {macronutrient1}, then {macronutrient2}, with {macronutrient3} last.",
  };

  b.seg_refer_queries = {
      "Segment the {ing_names} in this picture.",
      "Please segment the {ing_names} shown in this image.",
      "Can you mask the {ing_names} in this dish?",
      "Find the {ing_names} in this image and provide segmentation masks.",
      "I would like masks for the {ing_names} in this photo.",
      "Where {is_are} the {ing_names}? Please segment accordingly.",
  };
  b.seg_all_queries = {
      "Segment all the ingredients in this picture.",
      "Please segment every visible ingredient in this image.",
      "Mask out each ingredient you can see in this dish.",
      "Find and segment all of the ingredients shown here.",
  };
  b.seg_assign_answers = {
      "{Assignments}.",
      "Sure, {assignments}.",
      "Here are the masks: {assignments}.",
      "In this image, {assignments}.",
      "Certainly: {assignments}.",
  };
  b.seg_refusal_answers = {
      "The {absent_names} {is_are} not found in this picture.",
      "Sorry, the {absent_names} {is_are} not found in this picture.",
      "I could not find the {absent_names} in this image.",
      "There {is_are} no {absent_names} in this picture.",
  };

  b.sub_ingredient_calories =
      "the {name} weighs {mass_token} grams and provides {cal_token} kilocalories";
  b.sub_ingredient_nutrition =
      "the {name} weighs {mass_token} grams and provides {cal_token} kilocalories, "
      "with {fat_token} grams of fat, {carb_token} grams of carbohydrates and {pro_token} grams of protein";
  b.sub_total_nutrition =
      "the dish weighs {total_mass_token} grams and provides {total_cal_token} kilocalories in total, "
      "with {total_fat_token} grams of fat, {total_carb_token} grams of carbohydrates and {total_pro_token} grams of protein";
  b.sub_seg_assign_first = "the {name} is masked as {seg_token}";
  b.sub_seg_assign_rest = "the {name} as {seg_token}";
  return b;
}

// placeholders a slot may use (lowercase canonical names)
const std::set<std::string>& slot_placeholders(const std::string& slot) {
  static const std::map<std::string, std::set<std::string>> table = {
      {"classification_queries", {}},
      {"classification_answers", {"class_name"}},
      {"ingredient_queries", {}},
      {"ingredient_answers", {"ingredient_list"}},
      {"recipe_queries", {}},
      {"nutrition1_queries", {}},
      {"nutrition1_answers", {"total_cal_token", "ingredient_calories_list"}},
      {"nutrition2_queries", {"ing_names", "is_are"}},
      {"nutrition2_answers", {"ingredient_calories_list"}},
      {"nutrition3_queries", {}},
      {"nutrition3_answers", {"total_nutrition", "ingredient_nutrition_list"}},
      {"nutrition4_queries", {"ing_names", "is_are"}},
      {"nutrition4_answers", {"ingredient_nutrition_list"}},
      {"nutrition5_queries", {}},
      {"nutrition5_answers", {"total_nutrition"}},
      {"nutrition6_queries", {}},
      {"nutrition6_answers", {"macronutrient"}},
      {"nutrition7_queries", {}},
      {"nutrition7_answers", {"macronutrient1", "macronutrient2", "macronutrient3"}},
      {"seg_refer_queries", {"ing_names", "is_are"}},
      {"seg_all_queries", {}},
      {"seg_assign_answers", {"assignments"}},
      {"seg_refusal_answers", {"absent_names", "is_are"}},
      {"sub_ingredient_calories", {"name", "mass_token", "cal_token"}},
      {"sub_ingredient_nutrition", {"name", "mass_token", "cal_token", "fat_token", "carb_token", "pro_token"}},
      {"sub_total_nutrition",
       {"total_mass_token", "total_cal_token", "total_fat_token", "total_carb_token", "total_pro_token"}},
      {"sub_seg_assign_first", {"name", "seg_token"}},
      {"sub_seg_assign_rest", {"name", "seg_token"}},
  };
  auto it = table.find(slot);
  if (it == table.end()) throw ConfigError("unknown template slot " + slot);
  return it->second;
}

std::vector<std::string> placeholders_in(const std::string& tpl) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while ((pos = tpl.find('{', pos)) != std::string::npos) {
    std::size_t end = tpl.find('}', pos);
    if (end == std::string::npos) throw ConfigError("unbalanced '{' in template: " + tpl);
    out.push_back(tpl.substr(pos + 1, end - pos - 1));
    pos = end + 1;
  }
  return out;
}


void check_slot(const std::string& slot, const std::vector<std::string>& templates, long required_count) {
  if (required_count >= 0 && static_cast<long>(templates.size()) != required_count)
    throw ConfigError("template bank: " + slot + " must hold " + std::to_string(required_count) +
                      " templates, found " + std::to_string(templates.size()));
  if (templates.empty()) throw ConfigError("template bank: " + slot + " is empty");
  const auto& allowed = slot_placeholders(slot);
  for (const auto& tpl : templates)
    for (const auto& ph : placeholders_in(tpl))
      if (!allowed.count(to_lower(ph)))
        throw ConfigError("template bank: " + slot + " cannot resolve placeholder {" + ph + "}");
}

}  // namespace

const TemplateBank& TemplateBank::builtin() {
  static const TemplateBank bank = [] {
    TemplateBank b = make_builtin();
    b.validate();
    return b;
  }();
  return bank;
}

void TemplateBank::validate() const {
  check_slot("classification_queries", classification_queries, 10);
  check_slot("classification_answers", classification_answers, -1);
  check_slot("ingredient_queries", ingredient_queries, 8);
  check_slot("ingredient_answers", ingredient_answers, -1);
  check_slot("recipe_queries", recipe_queries, 11);
  long nq = 0, na = 0;
  for (int p = 0; p < 7; ++p) {
    std::string base = "nutrition" + std::to_string(p + 1);
    check_slot(base + "_queries", nutrition[static_cast<std::size_t>(p)].queries, -1);
    check_slot(base + "_answers", nutrition[static_cast<std::size_t>(p)].answers, -1);
    nq += static_cast<long>(nutrition[static_cast<std::size_t>(p)].queries.size());
    na += static_cast<long>(nutrition[static_cast<std::size_t>(p)].answers.size());
  }
  if (nq != 64) throw ConfigError("template bank: nutrition queries must total 64, found " + std::to_string(nq));
  if (na != 68) throw ConfigError("template bank: nutrition answers must total 68, found " + std::to_string(na));
  check_slot("seg_refer_queries", seg_refer_queries, 6);
  check_slot("seg_all_queries", seg_all_queries, 4);
  check_slot("seg_assign_answers", seg_assign_answers, 5);
  check_slot("seg_refusal_answers", seg_refusal_answers, 4);
  check_slot("sub_ingredient_calories", {sub_ingredient_calories}, 1);
  check_slot("sub_ingredient_nutrition", {sub_ingredient_nutrition}, 1);
  check_slot("sub_total_nutrition", {sub_total_nutrition}, 1);
  check_slot("sub_seg_assign_first", {sub_seg_assign_first}, 1);
  check_slot("sub_seg_assign_rest", {sub_seg_assign_rest}, 1);
  if (system_message.empty()) throw ConfigError("template bank: system_message is empty");
}

std::string render_template(const std::string& tpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tpl.size()) {
    std::size_t open = tpl.find('{', pos);
    if (open == std::string::npos) {
      out.append(tpl, pos, std::string::npos);
      break;
    }
    out.append(tpl, pos, open - pos);
    std::size_t close = tpl.find('}', open);
    if (close == std::string::npos) throw ConfigError("unbalanced '{' in template: " + tpl);
    std::string key = tpl.substr(open + 1, close - open - 1);
    auto it = values.find(key);
    if (it != values.end()) {
      out += it->second;
    } else if (!key.empty() && std::isupper(static_cast<unsigned char>(key[0]))) {
      auto low = values.find(to_lower(key));
      if (low == values.end()) throw ConfigError("unresolved placeholder {" + key + "}");
      out += capitalize(low->second);
    } else {
      throw ConfigError("unresolved placeholder {" + key + "}");
    }
    pos = close + 1;
  }
  return out;
}

std::string format_name_list(const std::vector<std::string>& names) {
  if (names.empty()) return "";
  if (names.size() == 1) return names[0];
  std::string out;
  for (std::size_t i = 0; i + 1 < names.size(); ++i) {
    if (i) out += ", ";
    out += names[i];
  }
  out += " and " + names.back();
  return out;
}

std::string format_clause_list(const std::vector<std::string>& clauses) {
  return join(clauses, "; ");
}

const char* is_are(std::size_t count) { return count == 1 ? "is" : "are"; }

std::string capitalize(std::string text) {
  for (char& c : text) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
      break;
    }
    if (!std::isspace(static_cast<unsigned char>(c))) break;
  }
  return text;
}

// ---- JSON swap ------------------------------------------------------------------

void TemplateBank::save(const std::string& path) const {
  json j;
  j["system_message"] = system_message;
  j["classification_queries"] = classification_queries;
  j["classification_answers"] = classification_answers;
  j["ingredient_queries"] = ingredient_queries;
  j["ingredient_answers"] = ingredient_answers;
  j["recipe_queries"] = recipe_queries;
  json jn = json::array();
  for (const auto& p : nutrition) {
    json jp;
    jp["queries"] = p.queries;
    jp["answers"] = p.answers;
    jn.push_back(jp);
  }
  j["nutrition"] = jn;
  j["seg_refer_queries"] = seg_refer_queries;
  j["seg_all_queries"] = seg_all_queries;
  j["seg_assign_answers"] = seg_assign_answers;
  j["seg_refusal_answers"] = seg_refusal_answers;
  j["sub_ingredient_calories"] = sub_ingredient_calories;
  j["sub_ingredient_nutrition"] = sub_ingredient_nutrition;
  j["sub_total_nutrition"] = sub_total_nutrition;
  j["sub_seg_assign_first"] = sub_seg_assign_first;
  j["sub_seg_assign_rest"] = sub_seg_assign_rest;
  write_file_atomic(path, j.dump(2) + "\n");
}

TemplateBank TemplateBank::load(const std::string& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ConfigError("malformed template bank: " + path);
  TemplateBank b;
  try {
    b.system_message = j.at("system_message").get<std::string>();
    b.classification_queries = j.at("classification_queries").get<std::vector<std::string>>();
    b.classification_answers = j.at("classification_answers").get<std::vector<std::string>>();
    b.ingredient_queries = j.at("ingredient_queries").get<std::vector<std::string>>();
    b.ingredient_answers = j.at("ingredient_answers").get<std::vector<std::string>>();
    b.recipe_queries = j.at("recipe_queries").get<std::vector<std::string>>();
    const auto& jn = j.at("nutrition");
    if (jn.size() != 7) throw ConfigError("template bank: nutrition must hold 7 patterns");
    for (std::size_t p = 0; p < 7; ++p) {
      b.nutrition[p].queries = jn[p].at("queries").get<std::vector<std::string>>();
      b.nutrition[p].answers = jn[p].at("answers").get<std::vector<std::string>>();
    }
    b.seg_refer_queries = j.at("seg_refer_queries").get<std::vector<std::string>>();
    b.seg_all_queries = j.at("seg_all_queries").get<std::vector<std::string>>();
    b.seg_assign_answers = j.at("seg_assign_answers").get<std::vector<std::string>>();
    b.seg_refusal_answers = j.at("seg_refusal_answers").get<std::vector<std::string>>();
    b.sub_ingredient_calories = j.at("sub_ingredient_calories").get<std::string>();
    b.sub_ingredient_nutrition = j.at("sub_ingredient_nutrition").get<std::string>();
    b.sub_total_nutrition = j.at("sub_total_nutrition").get<std::string>();
    b.sub_seg_assign_first = j.at("sub_seg_assign_first").get<std::string>();
    b.sub_seg_assign_rest = j.at("sub_seg_assign_rest").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("template bank field error: ") + e.what());
  }
  b.validate();
  return b;
}

}  // namespace umami::forge
