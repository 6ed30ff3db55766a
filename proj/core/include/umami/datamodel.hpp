#pragma once

// Domain types shared by the forge, model, trainer and evaluator. Everything
// here is immutable-after-construction plain data; operations are pure.

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "umami/common.hpp"

namespace umami {

// ---- nutrition -------------------------------------------------------------

// Units are fixed: calories in kilocalories, everything else in grams.
struct NutritionFacts {
  double mass = 0.0;
  double calories = 0.0;
  double fat = 0.0;
  double carbohydrate = 0.0;
  double protein = 0.0;
};

// Canonical field order; also the head-routing order in the model.
enum class NutritionField { mass, cal, carb, fat, pro };
inline constexpr NutritionField kNutritionFields[5] = {
    NutritionField::mass, NutritionField::cal, NutritionField::carb,
    NutritionField::fat, NutritionField::pro};

const char* field_name(NutritionField f);                    // "mass", "cal", ...
std::optional<NutritionField> field_from_name(std::string_view name);
double field_value(const NutritionFacts& facts, NutritionField f);

// ---- masks & images ---------------------------------------------------------

struct MaskImage {
  long height = 0;
  long width = 0;
  std::vector<std::uint8_t> values;  // row-major, strictly 0/1

  long area() const;  // number of foreground pixels
  bool operator==(const MaskImage&) const = default;
};

struct ImageHandle {
  enum class Role { overhead, frame };
  Role role = Role::overhead;
  std::string path;     // relative to the corpus root
  long width = 0;       // 0 = unknown (metadata optional)
  long height = 0;
  bool operator==(const ImageHandle&) const = default;
};

// ---- records ----------------------------------------------------------------

struct IngredientEntry {
  std::string name;
  std::optional<NutritionFacts> facts;
  std::optional<MaskImage> mask;
  std::optional<std::string> mask_path;  // set when the mask lives in a file
};

enum class Split { train, test };

struct FoodRecord {
  std::string record_id;
  std::vector<ImageHandle> images;  // >=1; exactly one overhead, rest frames
  std::optional<std::string> class_label;
  std::vector<IngredientEntry> ingredients;
  std::optional<std::string> recipe;
  std::optional<NutritionFacts> total;
  Split split = Split::train;

  const ImageHandle* overhead() const;  // nullptr if absent
  std::vector<const ImageHandle*> frames() const;
};

// ---- task tokens --------------------------------------------------------------

enum class TokenKind { nutrition_ingredient, nutrition_dish, segmentation };

struct TaskToken {
  TokenKind kind = TokenKind::nutrition_dish;
  std::optional<NutritionField> field;  // nutrition kinds only
  std::optional<int> index;             // ingredient-level and seg kinds only

  static TaskToken dish(NutritionField f) { return {TokenKind::nutrition_dish, f, std::nullopt}; }
  static TaskToken ingredient(NutritionField f, int i) { return {TokenKind::nutrition_ingredient, f, i}; }
  static TaskToken seg(int i) { return {TokenKind::segmentation, std::nullopt, i}; }

  bool operator==(const TaskToken&) const = default;
  // ordering for map keys: kind, field, index
  bool operator<(const TaskToken& o) const;
};

// "<total_cal>", "<mass_2>", "<seg_1>". Throws DataError on invalid
// combinations (dish token with an index, seg token with a field, missing
// index where one is required, index < 1).
std::string token_surface(const TaskToken& token);

// Inverse of token_surface over the closed token grammar. Accepts exactly
// the surface forms (including the angle brackets); anything else → nullopt.
std::optional<TaskToken> parse_token(std::string_view surface);
// Same but for the bare name without brackets ("total_cal", "mass_2").
std::optional<TaskToken> parse_token_name(std::string_view name);
std::string token_name(const TaskToken& token);  // surface minus brackets

// ---- conversations ---------------------------------------------------------------

using TokenLabel = std::variant<double, MaskImage>;

enum class Speaker { system, user, assistant };

struct Turn {
  Speaker speaker = Speaker::user;
  std::string text;
  std::vector<ImageHandle> images;           // first user turn only
  std::map<TaskToken, TokenLabel> token_labels;  // assistant turns only
};

enum class TaskTag { classification, ingredient, recipe, nutrition, segmentation, dialogue, reason_seg };
const char* task_tag_name(TaskTag t);
std::optional<TaskTag> task_tag_from_name(std::string_view name);

struct Conversation {
  std::vector<Turn> turns;
  TaskTag task_tag = TaskTag::classification;
  std::string source_record;
};

// ---- loss weights -----------------------------------------------------------------

struct LossWeights {
  double lambda_txt = 1.0;
  double lambda_nutrition = 0.1;
  double lambda_mask = 1.0;
  double lambda_mae = 0.1;     // main-text profile
  double lambda_mse = 0.0001;  // main-text profile
  double lambda_bce = 2.0;
  double lambda_dice = 0.5;

  // Alternate published profile (swaps the MAE/MSE emphasis).
  static LossWeights main_text_profile();
  static LossWeights table_profile();  // lambda_mse=1.0, lambda_mae=1e-3
  void validate() const;               // finite, >= 0, else ConfigError
};

// ---- validation --------------------------------------------------------------------

struct Violation {
  std::string field;  // where
  std::string rule;   // which invariant
};

// Pure, report-based, never auto-corrects. Empty report iff all invariants hold.
std::vector<Violation> validate_record(const FoodRecord& record);
std::vector<Violation> validate_conversation(const Conversation& conv);

// Count of non-overlapping occurrences of `needle` in `haystack`.
std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

}  // namespace umami
