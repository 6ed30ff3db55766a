#pragma once

// Query/answer template bank for the instruction forge. Counts are normative
// (they are checked), wording is data: the whole bank can be dumped to a JSON
// file, edited, and loaded back without code changes.
//
// Placeholder grammar: {name}. A placeholder whose first letter is uppercase
// renders the capitalized value ({Assignments} vs {assignments}).

#include <array>
#include <map>
#include <string>
#include <vector>

#include "umami/datamodel.hpp"

namespace umami::forge {

struct NutritionPatternTemplates {
  std::vector<std::string> queries;
  std::vector<std::string> answers;
};

struct TemplateBank {
  std::string system_message;

  std::vector<std::string> classification_queries;  // exactly 10
  std::vector<std::string> classification_answers;  // {class_name}
  std::vector<std::string> ingredient_queries;      // exactly 8
  std::vector<std::string> ingredient_answers;      // {ingredient_list}
  std::vector<std::string> recipe_queries;          // exactly 11 (answers are verbatim recipes)

  // Seven query-answer patterns; query counts sum to 64, answers to 68.
  std::array<NutritionPatternTemplates, 7> nutrition;

  std::vector<std::string> seg_refer_queries;    // 6   ({ing_names}, {is_are}, {Is_Are})
  std::vector<std::string> seg_all_queries;      // 4   (6+4 = 10 segmentation queries)
  std::vector<std::string> seg_assign_answers;   // 5   ({assignments})
  std::vector<std::string> seg_refusal_answers;  // 4   ({absent_names}, {is_are}; 5+4 = 9 answers)

  // Clause-level sub-templates expanded per ingredient / per dish.
  std::string sub_ingredient_calories;   // {name}, {mass_token}, {cal_token}
  std::string sub_ingredient_nutrition;  // + {fat_token}, {carb_token}, {pro_token}
  std::string sub_total_nutrition;       // {total_*_token} x5
  std::string sub_seg_assign_first;      // "the {name} is masked as {seg_token}"
  std::string sub_seg_assign_rest;       // "the {name} as {seg_token}"

  static const TemplateBank& builtin();

  // ConfigError when counts are off or a template names a placeholder its
  // slot cannot resolve.
  void validate() const;

  static TemplateBank load(const std::string& path);
  void save(const std::string& path) const;
};

// ---- rendering helpers ---------------------------------------------------------

// Substitutes every "{key}" from `values`; an uppercase-first key falls back
// to the lowercase entry with its rendered value capitalized. Unknown
// placeholders throw ConfigError (templates are validated data, not user text).
std::string render_template(const std::string& tpl, const std::map<std::string, std::string>& values);

// "beef" | "beef and onion" | "beef, onion and carrot"
std::string format_name_list(const std::vector<std::string>& names);
// Clause lists joined with "; " (clauses contain their own "and"s).
std::string format_clause_list(const std::vector<std::string>& clauses);
// "is" / "are" by count.
const char* is_are(std::size_t count);
std::string capitalize(std::string text);

}  // namespace umami::forge
