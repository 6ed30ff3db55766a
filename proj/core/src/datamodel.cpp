#include "umami/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace umami {

const char* field_name(NutritionField f) {
  switch (f) {
    case NutritionField::mass: return "mass";
    case NutritionField::cal: return "cal";
    case NutritionField::carb: return "carb";
    case NutritionField::fat: return "fat";
    case NutritionField::pro: return "pro";
  }
  return "?";
}

std::optional<NutritionField> field_from_name(std::string_view name) {
  for (NutritionField f : kNutritionFields)
    if (name == field_name(f)) return f;
  return std::nullopt;
}

double field_value(const NutritionFacts& facts, NutritionField f) {
  switch (f) {
    case NutritionField::mass: return facts.mass;
    case NutritionField::cal: return facts.calories;
    case NutritionField::carb: return facts.carbohydrate;
    case NutritionField::fat: return facts.fat;
    case NutritionField::pro: return facts.protein;
  }
  return 0.0;
}

long MaskImage::area() const {
  long n = 0;
  for (std::uint8_t v : values) n += v;
  return n;
}

const ImageHandle* FoodRecord::overhead() const {
  for (const auto& h : images)
    if (h.role == ImageHandle::Role::overhead) return &h;
  return nullptr;
}

std::vector<const ImageHandle*> FoodRecord::frames() const {
  std::vector<const ImageHandle*> out;
  for (const auto& h : images)
    if (h.role == ImageHandle::Role::frame) out.push_back(&h);
  return out;
}

// ---- task tokens ------------------------------------------------------------

bool TaskToken::operator<(const TaskToken& o) const {
  if (kind != o.kind) return static_cast<int>(kind) < static_cast<int>(o.kind);
  int fa = field ? static_cast<int>(*field) : -1;
  int fb = o.field ? static_cast<int>(*o.field) : -1;
  if (fa != fb) return fa < fb;
  int ia = index.value_or(-1), ib = o.index.value_or(-1);
  return ia < ib;
}

std::string token_name(const TaskToken& token) {
  switch (token.kind) {
    case TokenKind::nutrition_dish:
      if (token.index) throw DataError("invalid token: dish-level token carries an index");
      if (!token.field) throw DataError("invalid token: dish-level token missing field");
      return std::string("total_") + field_name(*token.field);
    case TokenKind::nutrition_ingredient:
      if (!token.field) throw DataError("invalid token: ingredient-level token missing field");
      if (!token.index || *token.index < 1) throw DataError("invalid token: ingredient-level token needs index >= 1");
      return std::string(field_name(*token.field)) + "_" + std::to_string(*token.index);
    case TokenKind::segmentation:
      if (token.field) throw DataError("invalid token: segmentation token carries a field");
      if (!token.index || *token.index < 1) throw DataError("invalid token: segmentation token needs index >= 1");
      return std::string("seg_") + std::to_string(*token.index);
  }
  throw DataError("invalid token kind");
}

std::string token_surface(const TaskToken& token) { return "<" + token_name(token) + ">"; }

namespace {

// strict positive-integer parse, no leading zeros/signs
std::optional<int> parse_index(std::string_view s) {
  if (s.empty() || s.size() > 6) return std::nullopt;
  if (s[0] == '0') return std::nullopt;
  int v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
  }
  return v;
}

}  // namespace

std::optional<TaskToken> parse_token_name(std::string_view name) {
  if (starts_with(name, "total_")) {
    auto f = field_from_name(name.substr(6));
    if (!f) return std::nullopt;
    return TaskToken::dish(*f);
  }
  if (starts_with(name, "seg_")) {
    auto i = parse_index(name.substr(4));
    if (!i) return std::nullopt;
    return TaskToken::seg(*i);
  }
  auto us = name.find('_');
  if (us == std::string_view::npos) return std::nullopt;
  auto f = field_from_name(name.substr(0, us));
  auto i = parse_index(name.substr(us + 1));
  if (!f || !i) return std::nullopt;
  return TaskToken::ingredient(*f, *i);
}

std::optional<TaskToken> parse_token(std::string_view surface) {
  if (surface.size() < 3 || surface.front() != '<' || surface.back() != '>') return std::nullopt;
  return parse_token_name(surface.substr(1, surface.size() - 2));
}

// ---- tags --------------------------------------------------------------------

const char* task_tag_name(TaskTag t) {
  switch (t) {
    case TaskTag::classification: return "classification";
    case TaskTag::ingredient: return "ingredient";
    case TaskTag::recipe: return "recipe";
    case TaskTag::nutrition: return "nutrition";
    case TaskTag::segmentation: return "segmentation";
    case TaskTag::dialogue: return "dialogue";
    case TaskTag::reason_seg: return "reason_seg";
  }
  return "?";
}

std::optional<TaskTag> task_tag_from_name(std::string_view name) {
  for (TaskTag t : {TaskTag::classification, TaskTag::ingredient, TaskTag::recipe, TaskTag::nutrition,
                    TaskTag::segmentation, TaskTag::dialogue, TaskTag::reason_seg})
    if (name == task_tag_name(t)) return t;
  return std::nullopt;
}

// ---- loss weights ---------------------------------------------------------------

LossWeights LossWeights::main_text_profile() { return LossWeights{}; }

LossWeights LossWeights::table_profile() {
  LossWeights w;
  w.lambda_mae = 1e-3;
  w.lambda_mse = 1.0;
  return w;
}

void LossWeights::validate() const {
  const double vals[] = {lambda_txt, lambda_nutrition, lambda_mask, lambda_mae,
                         lambda_mse, lambda_bce, lambda_dice};
  for (double v : vals)
    if (!std::isfinite(v) || v < 0.0)
      throw ConfigError("loss weights must be finite and >= 0");
}

// ---- validation -----------------------------------------------------------------

namespace {

void check_facts(const NutritionFacts& f, const std::string& where, std::vector<Violation>& out) {
  struct {
    const char* name;
    double v;
  } fields[] = {{"mass", f.mass}, {"calories", f.calories}, {"fat", f.fat},
                {"carbohydrate", f.carbohydrate}, {"protein", f.protein}};
  for (auto& fl : fields) {
    if (!std::isfinite(fl.v)) out.push_back({where + "." + fl.name, "finite"});
    else if (fl.v < 0.0) out.push_back({where + "." + fl.name, std::string(fl.name) + " >= 0"});
  }
}

}  // namespace

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t count = 0, pos = 0;
  while ((pos = haystack.find(needle, pos)) != std::string_view::npos) {
    ++count;
    pos += needle.size();
  }
  return count;
}

std::vector<Violation> validate_record(const FoodRecord& r) {
  std::vector<Violation> out;
  if (r.record_id.empty()) out.push_back({"record_id", "non-empty"});
  std::size_t overheads = 0;
  for (const auto& h : r.images)
    if (h.role == ImageHandle::Role::overhead) ++overheads;
  if (r.images.empty() || overheads != 1)
    out.push_back({"images", "exactly one overhead handle and >= 1 handles"});

  std::set<std::string> seen;
  for (std::size_t i = 0; i < r.ingredients.size(); ++i) {
    const auto& ing = r.ingredients[i];
    std::string where = "ingredients[" + std::to_string(i) + "]";
    if (ing.name.empty()) out.push_back({where + ".name", "non-empty"});
    std::string canon = canon_name(ing.name);
    if (!seen.insert(canon).second)
      out.push_back({where + ".name", "unique within record (case-insensitive)"});
    if (ing.facts) check_facts(*ing.facts, where + ".facts", out);
    if (ing.mask) {
      if (ing.mask->height * ing.mask->width <= 0)
        out.push_back({where + ".mask", "height*width > 0"});
      for (std::uint8_t v : ing.mask->values)
        if (v > 1) {
          out.push_back({where + ".mask", "values in {0,1}"});
          break;
        }
      if (ing.mask->values.size() != static_cast<std::size_t>(ing.mask->height * ing.mask->width))
        out.push_back({where + ".mask", "values length = height*width"});
      // masks must match the record's image dimensions where metadata is known
      const ImageHandle* oh = r.overhead();
      if (oh && oh->width > 0 && oh->height > 0 &&
          (ing.mask->width != oh->width || ing.mask->height != oh->height))
        out.push_back({where + ".mask", "mask dimensions equal image dimensions"});
    }
  }

  if (r.total) {
    check_facts(*r.total, "total", out);
    bool all_facts = !r.ingredients.empty();
    for (const auto& ing : r.ingredients)
      if (!ing.facts) all_facts = false;
    if (all_facts) {
      NutritionFacts sum;
      for (const auto& ing : r.ingredients) {
        sum.mass += ing.facts->mass;
        sum.calories += ing.facts->calories;
        sum.fat += ing.facts->fat;
        sum.carbohydrate += ing.facts->carbohydrate;
        sum.protein += ing.facts->protein;
      }
      struct {
        const char* name;
        double total, s;
      } pairs[] = {{"mass", r.total->mass, sum.mass},
                   {"calories", r.total->calories, sum.calories},
                   {"fat", r.total->fat, sum.fat},
                   {"carbohydrate", r.total->carbohydrate, sum.carbohydrate},
                   {"protein", r.total->protein, sum.protein}};
      for (auto& p : pairs) {
        double tol = 1e-6 * std::max({1.0, std::abs(p.total), std::abs(p.s)});
        if (std::abs(p.total - p.s) > tol)
          out.push_back({std::string("total.") + p.name, "total equals ingredient sum (1e-6 relative)"});
      }
    }
  }
  return out;
}

std::vector<Violation> validate_conversation(const Conversation& conv) {
  std::vector<Violation> out;
  const auto& ts = conv.turns;
  if (ts.empty() || ts[0].speaker != Speaker::system) {
    out.push_back({"turns", "first turn is system"});
    return out;
  }
  std::size_t assistants = 0;
  for (std::size_t i = 1; i < ts.size(); ++i) {
    Speaker want = (i % 2 == 1) ? Speaker::user : Speaker::assistant;
    if (ts[i].speaker != want)
      out.push_back({"turns[" + std::to_string(i) + "]", "alternating user/assistant after system"});
    if (ts[i].speaker == Speaker::assistant) ++assistants;
  }
  if (assistants == 0) out.push_back({"turns", ">= 1 assistant turn"});

  for (std::size_t i = 0; i < ts.size(); ++i) {
    const Turn& t = ts[i];
    std::string where = "turns[" + std::to_string(i) + "]";
    if (!t.images.empty() && i != 1)
      out.push_back({where + ".images", "image attached only to the first user turn"});
    if (!t.token_labels.empty() && t.speaker != Speaker::assistant)
      out.push_back({where + ".token_labels", "assistant turns only carry token_labels"});
    for (const auto& [token, label] : t.token_labels) {
      std::string surface;
      try {
        surface = token_surface(token);
      } catch (const DataError&) {
        out.push_back({where + ".token_labels", "valid task token"});
        continue;
      }
      if (count_occurrences(t.text, surface) != 1)
        out.push_back({where + ".token_labels", surface + " occurs exactly once in text"});
      bool is_seg = token.kind == TokenKind::segmentation;
      if (is_seg != std::holds_alternative<MaskImage>(label))
        out.push_back({where + ".token_labels", surface + " label type matches token kind"});
    }
  }

  // index contiguity: per kind, indices 1..k by order of first appearance
  // across the whole conversation (scanning text left to right).
  auto check_indices = [&](TokenKind kind, const char* what) {
    int next_expected = 1;
    for (const Turn& t : ts) {
      if (t.speaker != Speaker::assistant) continue;
      // collect (position, index) of surfaces of this kind present in labels
      std::vector<std::pair<std::size_t, int>> found;
      for (const auto& [token, label] : t.token_labels) {
        (void)label;
        if (token.kind != kind || !token.index) continue;
        std::string surface;
        try {
          surface = token_surface(token);
        } catch (const DataError&) {
          continue;
        }
        std::size_t pos = t.text.find(surface);
        if (pos != std::string::npos) found.push_back({pos, *token.index});
      }
      std::sort(found.begin(), found.end());
      for (auto& [pos, idx] : found) {
        (void)pos;
        if (idx == next_expected) ++next_expected;
        else if (idx >= next_expected) {
          out.push_back({"turns", std::string(what) + " indices consecutive from 1 by first appearance"});
          return;
        }
        // idx < next_expected: re-use of an earlier index is fine
      }
    }
  };
  check_indices(TokenKind::nutrition_ingredient, "ingredient-level token");
  check_indices(TokenKind::segmentation, "segmentation token");
  return out;
}

}  // namespace umami
