#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "umami/common.hpp"
#include "umami/datamodel.hpp"

using namespace umami;

namespace {

FoodRecord valid_record() {
  FoodRecord r;
  r.record_id = "r1";
  r.images = {{ImageHandle::Role::overhead, "img/r1.ppm", 8, 8}};
  r.class_label = "fried rice";
  IngredientEntry rice;
  rice.name = "rice";
  rice.facts = NutritionFacts{100.0, 130.0, 0.3, 28.0, 2.7};
  IngredientEntry egg;
  egg.name = "egg";
  egg.facts = NutritionFacts{50.0, 72.0, 4.8, 0.4, 6.3};
  r.ingredients = {rice, egg};
  r.total = NutritionFacts{150.0, 202.0, 5.1, 28.4, 9.0};
  return r;
}

}  // namespace

TEST_CASE("token surfaces round-trip through the parser") {
  std::vector<TaskToken> tokens;
  for (NutritionField f : kNutritionFields) {
    tokens.push_back(TaskToken::dish(f));
    tokens.push_back(TaskToken::ingredient(f, 1));
    tokens.push_back(TaskToken::ingredient(f, 13));
  }
  tokens.push_back(TaskToken::seg(1));
  tokens.push_back(TaskToken::seg(20));

  for (const auto& token : tokens) {
    std::string surface = token_surface(token);
    CHECK(surface.front() == '<');
    CHECK(surface.back() == '>');
    auto back = parse_token(surface);
    REQUIRE(back.has_value());
    CHECK(*back == token);
    auto named = parse_token_name(token_name(token));
    REQUIRE(named.has_value());
    CHECK(*named == token);
  }
}

TEST_CASE("dish token surfaces use the total_ prefix in canonical field order") {
  CHECK(token_surface(TaskToken::dish(NutritionField::mass)) == "<total_mass>");
  CHECK(token_surface(TaskToken::dish(NutritionField::cal)) == "<total_cal>");
  CHECK(token_surface(TaskToken::dish(NutritionField::carb)) == "<total_carb>");
  CHECK(token_surface(TaskToken::dish(NutritionField::fat)) == "<total_fat>");
  CHECK(token_surface(TaskToken::dish(NutritionField::pro)) == "<total_pro>");
  CHECK(token_surface(TaskToken::ingredient(NutritionField::cal, 2)) == "<cal_2>");
  CHECK(token_surface(TaskToken::seg(3)) == "<seg_3>");
}

TEST_CASE("parse_token rejects anything outside the closed grammar") {
  for (const char* bad : {"<total_mass_1>", "<mass>", "<seg_0>", "<seg_-1>", "<seg_>",
                          "<cal_01>", "<calories_1>", "total_mass", "<seg_1", "seg_1>",
                          "<SEG_1>", "<mass_1 >", "", "<>", "<total_cal_3>"}) {
    CAPTURE(bad);
    CHECK_FALSE(parse_token(bad).has_value());
  }
}

TEST_CASE("invalid token combinations throw on surface rendering") {
  TaskToken dish_with_index{TokenKind::nutrition_dish, NutritionField::mass, 1};
  CHECK_THROWS_AS(token_surface(dish_with_index), DataError);
  TaskToken ingredient_without_index{TokenKind::nutrition_ingredient, NutritionField::cal,
                                     std::nullopt};
  CHECK_THROWS_AS(token_surface(ingredient_without_index), DataError);
  TaskToken seg_with_field{TokenKind::segmentation, NutritionField::fat, 1};
  CHECK_THROWS_AS(token_surface(seg_with_field), DataError);
  TaskToken zero_index{TokenKind::segmentation, std::nullopt, 0};
  CHECK_THROWS_AS(token_surface(zero_index), DataError);
}

TEST_CASE("token ordering is usable as a map key") {
  CHECK(TaskToken::ingredient(NutritionField::mass, 1) < TaskToken::dish(NutritionField::mass));
  CHECK(TaskToken::ingredient(NutritionField::mass, 1) <
        TaskToken::ingredient(NutritionField::mass, 2));
  CHECK(TaskToken::ingredient(NutritionField::mass, 2) <
        TaskToken::ingredient(NutritionField::cal, 1));
  CHECK_FALSE(TaskToken::seg(1) < TaskToken::seg(1));
}

TEST_CASE("field_value selects the matching component") {
  NutritionFacts f{10.0, 20.0, 3.0, 4.0, 5.0};
  CHECK(field_value(f, NutritionField::mass) == 10.0);
  CHECK(field_value(f, NutritionField::cal) == 20.0);
  CHECK(field_value(f, NutritionField::fat) == 3.0);
  CHECK(field_value(f, NutritionField::carb) == 4.0);
  CHECK(field_value(f, NutritionField::pro) == 5.0);
  for (NutritionField x : kNutritionFields) CHECK(field_from_name(field_name(x)) == x);
}

TEST_CASE("a well-formed record validates cleanly") {
  CHECK(validate_record(valid_record()).empty());
}

TEST_CASE("validation flags a missing overhead image") {
  FoodRecord r = valid_record();
  r.images[0].role = ImageHandle::Role::frame;
  CHECK_FALSE(validate_record(r).empty());
  r.images = {};
  CHECK_FALSE(validate_record(r).empty());
}

TEST_CASE("validation flags duplicate canonical ingredient names") {
  FoodRecord r = valid_record();
  r.ingredients[1].name = " Rice ";  // same canonical name as "rice"
  CHECK_FALSE(validate_record(r).empty());
}

TEST_CASE("validation flags totals that disagree with ingredient sums") {
  FoodRecord r = valid_record();
  r.total->calories += 1.0;
  CHECK_FALSE(validate_record(r).empty());
}

TEST_CASE("validation flags non-binary masks and shape mismatches") {
  FoodRecord r = valid_record();
  MaskImage m;
  m.height = 8;
  m.width = 8;
  m.values.assign(64, 0);
  m.values[5] = 2;  // not 0/1
  r.ingredients[0].mask = m;
  CHECK_FALSE(validate_record(r).empty());

  r = valid_record();
  m.values.assign(64, 1);
  m.width = 4;  // disagrees with image metadata
  m.values.resize(32);
  r.ingredients[0].mask = m;
  CHECK_FALSE(validate_record(r).empty());
}

TEST_CASE("mask area counts foreground pixels") {
  MaskImage m;
  m.height = 2;
  m.width = 3;
  m.values = {1, 0, 1, 0, 0, 1};
  CHECK(m.area() == 3);
}

TEST_CASE("loss weight profiles carry the published regression emphases") {
  LossWeights main = LossWeights::main_text_profile();
  CHECK(main.lambda_mae == 0.1);
  CHECK(main.lambda_mse == 0.0001);
  LossWeights table = LossWeights::table_profile();
  CHECK(table.lambda_mse == 1.0);
  CHECK(table.lambda_mae == 1e-3);
  // shared weights agree between the two profiles
  CHECK(main.lambda_txt == table.lambda_txt);
  CHECK(main.lambda_nutrition == table.lambda_nutrition);
  CHECK(main.lambda_mask == table.lambda_mask);
  CHECK(main.lambda_bce == 2.0);
  CHECK(main.lambda_dice == 0.5);
  CHECK_NOTHROW(main.validate());

  LossWeights bad = main;
  bad.lambda_mask = -0.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("task tag names are stable") {
  CHECK(std::string(task_tag_name(TaskTag::classification)) == "classification");
  CHECK(std::string(task_tag_name(TaskTag::reason_seg)) == "reason_seg");
}

TEST_CASE("count_occurrences counts non-overlapping hits") {
  CHECK(count_occurrences("aaaa", "aa") == 2);
  CHECK(count_occurrences("<seg_1> and <seg_1>", "<seg_1>") == 2);
  CHECK(count_occurrences("abc", "x") == 0);
}
