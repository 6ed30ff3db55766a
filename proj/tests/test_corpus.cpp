#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "umami/common.hpp"
#include "umami/corpus.hpp"
#include "umami/datamodel.hpp"
#include "umami/imageio.hpp"

using namespace umami;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / "umami_test_corpus" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

MaskImage checker_mask(long h, long w) {
  MaskImage m;
  m.height = h;
  m.width = w;
  m.values.resize(static_cast<std::size_t>(h * w));
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) m.values[static_cast<std::size_t>(r * w + c)] = (r + c) % 2;
  return m;
}

FoodRecord sample_record() {
  FoodRecord r;
  r.record_id = "dish_007";
  r.images = {{ImageHandle::Role::overhead, "images/dish_007.ppm", 8, 8},
              {ImageHandle::Role::frame, "images/dish_007_f1.ppm", 8, 8}};
  r.class_label = "noodle soup";
  IngredientEntry noodles;
  noodles.name = "noodles";
  noodles.facts = NutritionFacts{120.0, 165.0, 1.2, 30.0, 6.0};
  noodles.mask = checker_mask(8, 8);
  IngredientEntry egg;
  egg.name = "egg";
  egg.facts = NutritionFacts{50.0, 72.0, 4.8, 0.4, 6.3};
  r.ingredients = {noodles, egg};
  r.recipe = "Boil the noodles.\nAdd the egg.";
  r.total = NutritionFacts{170.0, 237.0, 6.0, 30.4, 12.3};
  return r;
}

Conversation sample_conversation() {
  Conversation conv;
  conv.task_tag = TaskTag::nutrition;
  conv.source_record = "dish_007";
  Turn sys;
  sys.speaker = Speaker::system;
  sys.text = "A chat between a curious human and a food analyst.";
  Turn user;
  user.speaker = Speaker::user;
  user.text = "How heavy are the noodles? <image>";
  user.images = {{ImageHandle::Role::overhead, "images/dish_007.ppm", 8, 8}};
  Turn asst;
  asst.speaker = Speaker::assistant;
  asst.text = "The noodles weigh <mass_1> grams. <seg_1>";
  asst.token_labels[TaskToken::ingredient(NutritionField::mass, 1)] = 120.0;
  asst.token_labels[TaskToken::seg(1)] = checker_mask(8, 8);
  conv.turns = {sys, user, asst};
  return conv;
}

}  // namespace

TEST_CASE("record JSON round-trips byte-exactly") {
  FoodRecord r = sample_record();
  std::string j1 = record_to_json(r);
  FoodRecord back = record_from_json(j1, "/nonexistent-root");
  std::string j2 = record_to_json(back);
  CHECK(j1 == j2);
  CHECK(back.record_id == r.record_id);
  REQUIRE(back.ingredients.size() == 2);
  REQUIRE(back.ingredients[0].mask.has_value());
  CHECK(back.ingredients[0].mask->values == r.ingredients[0].mask->values);
  CHECK(back.total->protein == r.total->protein);
  CHECK(back.images[0].role == ImageHandle::Role::overhead);
  CHECK(back.images[1].role == ImageHandle::Role::frame);
}

TEST_CASE("minimal record survives optional-field absence") {
  FoodRecord r;
  r.record_id = "bare";
  r.images = {{ImageHandle::Role::overhead, "x.ppm", 4, 4}};
  std::string j1 = record_to_json(r);
  FoodRecord back = record_from_json(j1, ".");
  CHECK(record_to_json(back) == j1);
  CHECK_FALSE(back.class_label.has_value());
  CHECK_FALSE(back.recipe.has_value());
  CHECK_FALSE(back.total.has_value());
  CHECK(back.ingredients.empty());
}

TEST_CASE("path-backed masks resolve against the corpus root") {
  std::string root = fresh_dir("mask_paths");
  fs::create_directories(fs::path(root) / "masks");
  MaskImage m = checker_mask(6, 6);
  write_mask_pgm(root + "/masks/noodles.pgm", m);

  FoodRecord r = sample_record();
  r.ingredients[0].mask.reset();
  r.ingredients[0].mask_path = "masks/noodles.pgm";
  std::string j1 = record_to_json(r);
  CHECK(j1.find("masks/noodles.pgm") != std::string::npos);
  CHECK(j1.find("counts") == std::string::npos);

  FoodRecord back = record_from_json(j1, root);
  REQUIRE(back.ingredients[0].mask.has_value());
  CHECK(back.ingredients[0].mask->values == m.values);
  CHECK(back.ingredients[0].mask_path == "masks/noodles.pgm");
  CHECK(record_to_json(back) == j1);
}

TEST_CASE("record parser reports malformed lines as data errors") {
  CHECK_THROWS_AS(record_from_json("not json", "."), DataError);
  CHECK_THROWS_AS(record_from_json("{}", "."), DataError);
  CHECK_THROWS_AS(record_from_json("[1,2,3]", "."), DataError);
}

TEST_CASE("conversation JSON round-trips byte-exactly including labels") {
  Conversation conv = sample_conversation();
  std::string j1 = conversation_to_json(conv);
  Conversation back = conversation_from_json(j1, ".");
  std::string j2 = conversation_to_json(back);
  CHECK(j1 == j2);
  CHECK(back.task_tag == TaskTag::nutrition);
  CHECK(back.source_record == "dish_007");
  REQUIRE(back.turns.size() == 3);
  CHECK(back.turns[0].speaker == Speaker::system);
  CHECK(back.turns[2].speaker == Speaker::assistant);
  const auto& labels = back.turns[2].token_labels;
  REQUIRE(labels.size() == 2);
  auto mass = labels.find(TaskToken::ingredient(NutritionField::mass, 1));
  REQUIRE(mass != labels.end());
  CHECK(std::get<double>(mass->second) == 120.0);
  auto seg = labels.find(TaskToken::seg(1));
  REQUIRE(seg != labels.end());
  CHECK(std::get<MaskImage>(seg->second).area() == checker_mask(8, 8).area());
}

TEST_CASE("shard files hold one value per line and load in order") {
  std::string root = fresh_dir("shards");
  std::vector<FoodRecord> records;
  for (int i = 0; i < 5; ++i) {
    FoodRecord r = sample_record();
    r.record_id = "rec_" + std::to_string(i);
    records.push_back(r);
  }
  std::string path = root + "/records.jsonl";
  write_record_shard(path, records);

  std::string bytes = read_file(path);
  CHECK(!bytes.empty());
  CHECK(bytes.back() == '\n');
  std::size_t lines = 0;
  for (char ch : bytes)
    if (ch == '\n') ++lines;
  CHECK(lines == 5);

  auto back = load_record_shard(path, root);
  REQUIRE(back.size() == 5);
  for (int i = 0; i < 5; ++i) CHECK(back[static_cast<std::size_t>(i)].record_id == "rec_" + std::to_string(i));

  std::vector<Conversation> convs = {sample_conversation(), sample_conversation()};
  convs[1].source_record = "other";
  std::string cpath = root + "/convs.jsonl";
  write_conversation_shard(cpath, convs);
  auto cback = load_conversation_shard(cpath, root);
  REQUIRE(cback.size() == 2);
  CHECK(cback[0].source_record == "dish_007");
  CHECK(cback[1].source_record == "other");
}

TEST_CASE("manifest round-trips and resolves dataset lookups") {
  std::string root = fresh_dir("manifest");
  CorpusManifest m;
  m.datasets.push_back({"nutrition5k", "nutrition5k/records.jsonl", true,
                        {TaskTag::nutrition, TaskTag::segmentation}});
  m.datasets.push_back({"foodseg", "foodseg/records.jsonl", false, {TaskTag::segmentation}});
  std::string path = root + "/manifest.json";
  write_manifest(path, m);

  CorpusManifest back = load_manifest(path);
  CHECK(back.root == root);
  REQUIRE(back.datasets.size() == 2);
  CHECK(back.datasets[0].name == "nutrition5k");
  CHECK(back.datasets[0].masks_complete);
  CHECK_FALSE(back.datasets[1].masks_complete);
  REQUIRE(back.datasets[0].tasks.size() == 2);
  CHECK(back.datasets[0].tasks[1] == TaskTag::segmentation);
  CHECK(back.find("foodseg") != nullptr);
  CHECK(back.find("foodseg")->records_path == "foodseg/records.jsonl");
  CHECK(back.find("missing") == nullptr);
}

TEST_CASE("dataset loading validates every record") {
  std::string root = fresh_dir("validates");
  FoodRecord good = sample_record();
  FoodRecord bad = sample_record();
  bad.images.clear();  // no overhead image
  write_record_shard(root + "/records.jsonl", {good, bad});

  CorpusManifest m;
  m.root = root;
  m.datasets.push_back({"broken", "records.jsonl", true, {TaskTag::nutrition}});
  CHECK_THROWS_AS(load_dataset_records(m, m.datasets[0]), DataError);

  FoodRecord good2 = good;
  good2.record_id = "dish_008";
  write_record_shard(root + "/records.jsonl", {good, good2});
  auto loaded = load_dataset_records(m, m.datasets[0]);
  CHECK(loaded.size() == 2);

  // duplicate ids within one dataset are rejected too
  write_record_shard(root + "/records.jsonl", {good, good});
  CHECK_THROWS_AS(load_dataset_records(m, m.datasets[0]), DataError);
}

TEST_CASE("run-length codec is the identity on random masks") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    long h = 1 + static_cast<long>(rng() % 13);
    long w = 1 + static_cast<long>(rng() % 13);
    MaskImage m;
    m.height = h;
    m.width = w;
    m.values.resize(static_cast<std::size_t>(h * w));
    for (auto& v : m.values) v = static_cast<std::uint8_t>(rng() % 2);
    auto counts = rle_encode(m);
    long sum = 0;
    for (long c : counts) sum += c;
    CHECK(sum == h * w);
    MaskImage back = rle_decode(h, w, counts);
    CHECK(back.height == h);
    CHECK(back.width == w);
    CHECK(back.values == m.values);
  }
}

TEST_CASE("run-length counts start with the background run") {
  MaskImage all_fg;
  all_fg.height = 2;
  all_fg.width = 2;
  all_fg.values = {1, 1, 1, 1};
  auto counts = rle_encode(all_fg);
  REQUIRE(!counts.empty());
  CHECK(counts[0] == 0);  // zero-length background prefix
  CHECK(rle_decode(2, 2, counts).values == all_fg.values);

  MaskImage all_bg;
  all_bg.height = 2;
  all_bg.width = 2;
  all_bg.values = {0, 0, 0, 0};
  CHECK(rle_decode(2, 2, rle_encode(all_bg)).values == all_bg.values);
}

TEST_CASE("run-length decode rejects count mismatches") {
  CHECK_THROWS_AS(rle_decode(2, 2, {1, 1}), DataError);       // sums to 2, needs 4
  CHECK_THROWS_AS(rle_decode(2, 2, {5}), DataError);          // sums past the end
  CHECK_THROWS_AS(rle_decode(2, 2, {1, -1, 4}), DataError);   // negative run
}

TEST_CASE("mask PGM files are byte-stable and lossless") {
  std::string root = fresh_dir("pgm");
  MaskImage m = checker_mask(9, 5);
  std::string a = root + "/a.pgm";
  std::string b = root + "/b.pgm";
  write_mask_pgm(a, m);
  write_mask_pgm(b, m);
  CHECK(read_file(a) == read_file(b));
  MaskImage back = read_mask_pgm(a);
  CHECK(back.height == 9);
  CHECK(back.width == 5);
  CHECK(back.values == m.values);
}

TEST_CASE("rgb PPM files are byte-stable and lossless") {
  std::string root = fresh_dir("ppm");
  RgbImage img;
  img.height = 4;
  img.width = 6;
  img.values.resize(4 * 6 * 3);
  std::mt19937_64 rng(11);
  for (auto& v : img.values) v = static_cast<std::uint8_t>(rng() % 256);
  std::string a = root + "/a.ppm";
  write_image_ppm(a, img);
  RgbImage back = read_image_ppm(a);
  CHECK(back.height == img.height);
  CHECK(back.width == img.width);
  CHECK(back.values == img.values);
  std::string c = root + "/c.ppm";
  write_image_ppm(c, back);
  CHECK(read_file(a) == read_file(c));
}

TEST_CASE("pgm reader rejects malformed headers") {
  std::string root = fresh_dir("badpgm");
  write_file_atomic(root + "/bad.pgm", "P5\n3 3\n");  // truncated
  CHECK_THROWS_AS(read_mask_pgm(root + "/bad.pgm"), DataError);
  write_file_atomic(root + "/notpgm.pgm", "hello world");
  CHECK_THROWS_AS(read_mask_pgm(root + "/notpgm.pgm"), DataError);
  CHECK_THROWS_AS(read_mask_pgm(root + "/missing.pgm"), DataError);
}

TEST_CASE("atomic writes land complete or not at all") {
  std::string root = fresh_dir("atomic");
  std::string path = root + "/file.txt";
  write_file_atomic(path, "first");
  CHECK(read_file(path) == "first");
  write_file_atomic(path, "second version");
  CHECK(read_file(path) == "second version");
  // no stray temp files left behind
  std::size_t entries = 0;
  for (const auto& e : fs::directory_iterator(root)) {
    (void)e;
    ++entries;
  }
  CHECK(entries == 1);
}
