#include "umami/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "umami/common.hpp"
#include "umami/imageio.hpp"
#include "umami/instruction_forge.hpp"
#include "umami/templates.hpp"

namespace umami {

namespace {

const std::vector<std::string>& name_pool() {
  static const std::vector<std::string> pool = {
      "beef",     "chicken", "onion",   "carrot", "potato",  "tomato",  "rice",
      "noodles",  "egg",     "tofu",    "broccoli", "mushroom", "cheese", "spinach",
      "salmon",   "shrimp",  "pepper",  "corn",   "beans",   "cabbage"};
  return pool;
}

const std::vector<std::string>& class_pool() {
  static const std::vector<std::string> pool = {
      "fried rice",   "beef stew",   "greek salad", "chicken curry",
      "miso soup",    "pasta bolognese", "veggie burger", "fish tacos"};
  return pool;
}

const std::vector<std::string>& recipe_pool() {
  static const std::vector<std::string> pool = {
      "Chop the onion and fry it with rice until golden.",
      "Simmer the beef with carrots for two hours.",
      "Toss the tomatoes with cheese and olive oil.",
      "Steam the broccoli and season with pepper.",
      "Boil the noodles and add the mushroom broth.",
      "Grill the salmon and serve over spinach.",
  };
  return pool;
}

std::vector<std::string> pick_names(std::mt19937_64& rng, std::size_t count) {
  auto idx = sample_without_replacement(rng, name_pool().size(), count);
  std::vector<std::string> names;
  for (auto i : idx) names.push_back(name_pool()[i]);
  return names;
}

NutritionFacts random_facts(std::mt19937_64& rng) {
  NutritionFacts f;
  f.mass = 30.0 + std::floor(next_unit(rng) * 540.0) * 0.5;  // 30..300, 0.5 steps
  f.calories = std::floor(f.mass * (0.5 + 2.5 * next_unit(rng)) * 10.0) * 0.1;
  f.fat = std::floor(f.mass * (0.05 + 0.25 * next_unit(rng)) * 10.0) * 0.1;
  f.carbohydrate = std::floor(f.mass * (0.05 + 0.25 * next_unit(rng)) * 10.0) * 0.1;
  f.protein = std::floor(f.mass * (0.05 + 0.25 * next_unit(rng)) * 10.0) * 0.1;
  return f;
}

NutritionFacts sum_facts(const std::vector<IngredientEntry>& ingredients) {
  NutritionFacts total;
  for (const auto& ing : ingredients) {
    total.mass += ing.facts->mass;
    total.calories += ing.facts->calories;
    total.fat += ing.facts->fat;
    total.carbohydrate += ing.facts->carbohydrate;
    total.protein += ing.facts->protein;
  }
  return total;
}

// Disjoint rectangle per masked ingredient on a ceil(sqrt(m)) grid.
MaskImage rect_mask(long image, std::size_t k, std::size_t m) {
  long grid = 1;
  while (grid * grid < static_cast<long>(m)) ++grid;
  long cell = image / grid;
  long r0 = static_cast<long>(k) / grid * cell + 1;
  long c0 = static_cast<long>(k) % grid * cell + 1;
  long r1 = r0 + cell - 2;
  long c1 = c0 + cell - 2;
  MaskImage mask;
  mask.height = image;
  mask.width = image;
  mask.values.assign(static_cast<std::size_t>(image * image), 0);
  for (long r = r0; r < r1; ++r)
    for (long c = c0; c < c1; ++c) mask.values[static_cast<std::size_t>(r * image + c)] = 1;
  return mask;
}

// Banded background plus an overlay color per mask: pixels identify both the
// record and its masked regions.
RgbImage paint_image(long size, std::mt19937_64& rng,
                     const std::vector<const MaskImage*>& masks) {
  RgbImage img;
  img.height = size;
  img.width = size;
  img.values.assign(static_cast<std::size_t>(size * size * 3), 0);
  const long bands = 4;
  std::uint8_t band_color[bands][3];
  for (long b = 0; b < bands; ++b)
    for (int ch = 0; ch < 3; ++ch)
      band_color[b][ch] = static_cast<std::uint8_t>(20 + next_index(rng, 200));
  for (long r = 0; r < size; ++r)
    for (long c = 0; c < size; ++c) {
      long b = c * bands / size;
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = band_color[b][ch];
    }
  for (const auto* mask : masks) {
    std::uint8_t color[3];
    for (int ch = 0; ch < 3; ++ch) color[ch] = static_cast<std::uint8_t>(40 + next_index(rng, 180));
    for (long r = 0; r < size; ++r)
      for (long c = 0; c < size; ++c)
        if (mask->values[static_cast<std::size_t>(r * size + c)])
          for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[ch];
  }
  return img;
}

struct CorpusWriter {
  std::string root;
  long image_size;

  std::string write_image(const std::string& rel, std::mt19937_64& rng,
                          const std::vector<const MaskImage*>& masks) const {
    std::string full = root + "/" + rel;
    std::filesystem::create_directories(std::filesystem::path(full).parent_path());
    write_image_ppm(full, paint_image(image_size, rng, masks));
    return rel;
  }

  std::string write_mask(const std::string& rel, const MaskImage& mask) const {
    std::string full = root + "/" + rel;
    std::filesystem::create_directories(std::filesystem::path(full).parent_path());
    write_mask_pgm(full, mask);
    return rel;
  }
};

ImageHandle overhead_handle(const std::string& rel, long size) {
  ImageHandle h;
  h.role = ImageHandle::Role::overhead;
  h.path = rel;
  h.width = size;
  h.height = size;
  return h;
}

ImageHandle frame_handle(const std::string& rel, long size) {
  ImageHandle h = overhead_handle(rel, size);
  h.role = ImageHandle::Role::frame;
  return h;
}

}  // namespace

std::string make_synth_corpus(const SynthSpec& spec) {
  if (spec.image_size < 8) throw ConfigError("synth: image_size too small");
  if (spec.records_per_dataset < 1) throw ConfigError("synth: records_per_dataset must be >= 1");
  std::filesystem::create_directories(spec.root);
  CorpusWriter w{spec.root, spec.image_size};

  CorpusManifest manifest;
  manifest.root = spec.root;

  auto add_dataset = [&](const std::string& name, bool masks_complete,
                         std::vector<TaskTag> tasks, std::vector<FoodRecord> records) {
    std::string rel = "records/" + name + ".jsonl";
    std::filesystem::create_directories(spec.root + "/records");
    write_record_shard(spec.root + "/" + rel, records);
    manifest.datasets.push_back({name, rel, masks_complete, std::move(tasks)});
  };

  // vireo: classification labels plus ingredient lists
  {
    std::vector<FoodRecord> records;
    for (long j = 0; j < spec.records_per_dataset; ++j) {
      FoodRecord r;
      r.record_id = "vireo_" + std::to_string(j);
      auto rng = make_rng(derive_seed(spec.seed, "vireo_" + std::to_string(j)));
      r.class_label = class_pool()[static_cast<std::size_t>(j) % class_pool().size()];
      for (auto& name : pick_names(rng, 2 + j % 2)) r.ingredients.push_back({name, {}, {}, {}});
      r.images.push_back(overhead_handle(
          w.write_image("images/vireo/" + std::to_string(j) + ".ppm", rng, {}), spec.image_size));
      records.push_back(std::move(r));
    }
    add_dataset("vireo", true, {TaskTag::classification, TaskTag::ingredient}, std::move(records));
  }

  // recipe1m: recipes plus ingredient lists
  {
    std::vector<FoodRecord> records;
    for (long j = 0; j < spec.records_per_dataset; ++j) {
      FoodRecord r;
      r.record_id = "recipe1m_" + std::to_string(j);
      auto rng = make_rng(derive_seed(spec.seed, "recipe1m_" + std::to_string(j)));
      r.recipe = recipe_pool()[static_cast<std::size_t>(j) % recipe_pool().size()];
      for (auto& name : pick_names(rng, 2 + j % 3)) r.ingredients.push_back({name, {}, {}, {}});
      r.images.push_back(overhead_handle(
          w.write_image("images/recipe1m/" + std::to_string(j) + ".ppm", rng, {}),
          spec.image_size));
      records.push_back(std::move(r));
    }
    add_dataset("recipe1m", true, {TaskTag::recipe, TaskTag::ingredient}, std::move(records));
  }

  // nutrition5k: per-ingredient facts, exact totals, overhead plus two frames
  {
    std::vector<FoodRecord> records;
    for (long j = 0; j < spec.records_per_dataset; ++j) {
      FoodRecord r;
      r.record_id = "nutrition5k_" + std::to_string(j);
      auto rng = make_rng(derive_seed(spec.seed, "nutrition5k_" + std::to_string(j)));
      std::size_t count = 1 + static_cast<std::size_t>(j) % 6;
      for (auto& name : pick_names(rng, count))
        r.ingredients.push_back({name, random_facts(rng), {}, {}});
      r.total = sum_facts(r.ingredients);
      std::string base = "images/nutrition5k/" + std::to_string(j);
      r.images.push_back(overhead_handle(w.write_image(base + ".ppm", rng, {}), spec.image_size));
      r.images.push_back(frame_handle(w.write_image(base + "_f0.ppm", rng, {}), spec.image_size));
      r.images.push_back(frame_handle(w.write_image(base + "_f1.ppm", rng, {}), spec.image_size));
      records.push_back(std::move(r));
    }
    add_dataset("nutrition5k", true, {TaskTag::nutrition}, std::move(records));
  }

  // foodseg: fully annotated masks
  {
    std::vector<FoodRecord> records;
    for (long j = 0; j < spec.records_per_dataset; ++j) {
      FoodRecord r;
      r.record_id = "foodseg_" + std::to_string(j);
      auto rng = make_rng(derive_seed(spec.seed, "foodseg_" + std::to_string(j)));
      std::size_t count = 3 + static_cast<std::size_t>(j) % 3;
      auto names = pick_names(rng, count);
      std::vector<const MaskImage*> masks;
      for (std::size_t k = 0; k < names.size(); ++k) {
        IngredientEntry ing{names[k], {}, rect_mask(spec.image_size, k, names.size()), {}};
        ing.mask_path = w.write_mask(
            "masks/foodseg/" + std::to_string(j) + "_" + std::to_string(k) + ".pgm", *ing.mask);
        r.ingredients.push_back(std::move(ing));
      }
      for (const auto& ing : r.ingredients) masks.push_back(&*ing.mask);
      r.images.push_back(overhead_handle(
          w.write_image("images/foodseg/" + std::to_string(j) + ".ppm", rng, masks),
          spec.image_size));
      records.push_back(std::move(r));
    }
    add_dataset("foodseg", true, {TaskTag::segmentation}, std::move(records));
  }

  // uec: partially annotated (first two ingredients masked)
  {
    std::vector<FoodRecord> records;
    for (long j = 0; j < spec.records_per_dataset; ++j) {
      FoodRecord r;
      r.record_id = "uec_" + std::to_string(j);
      auto rng = make_rng(derive_seed(spec.seed, "uec_" + std::to_string(j)));
      std::size_t count = 3 + static_cast<std::size_t>(j) % 2;
      auto names = pick_names(rng, count);
      std::vector<const MaskImage*> masks;
      for (std::size_t k = 0; k < names.size(); ++k) {
        IngredientEntry ing{names[k], {}, {}, {}};
        if (k < 2) {
          ing.mask = rect_mask(spec.image_size, k, 4);
          ing.mask_path = w.write_mask(
              "masks/uec/" + std::to_string(j) + "_" + std::to_string(k) + ".pgm", *ing.mask);
        }
        r.ingredients.push_back(std::move(ing));
      }
      for (const auto& ing : r.ingredients)
        if (ing.mask) masks.push_back(&*ing.mask);
      r.images.push_back(overhead_handle(
          w.write_image("images/uec/" + std::to_string(j) + ".ppm", rng, masks), spec.image_size));
      records.push_back(std::move(r));
    }
    add_dataset("uec", false, {TaskTag::segmentation}, std::move(records));
  }

  std::string manifest_path = spec.root + "/manifest.json";
  write_manifest(manifest_path, manifest);
  return manifest_path;
}

// ---- tiny overfit corpus -------------------------------------------------------------

namespace {

// Deterministic seed search: first derived seed whose build satisfies `want`.
template <typename Build, typename Want>
Conversation search_variant(Build build, Want want, std::uint64_t seed, const char* what) {
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    ForgeStats stats;
    Conversation conv = build(derive_seed(seed, attempt), stats);
    if (want(stats)) return conv;
  }
  throw DataError(std::string("could not synthesize a ") + what + " conversation in 64 attempts");
}

}  // namespace

std::vector<Conversation> make_tiny_corpus(const std::string& root, long image_size,
                                           std::uint64_t seed) {
  std::filesystem::create_directories(root);
  CorpusWriter w{root, image_size};
  const auto& bank = forge::TemplateBank::builtin();
  std::vector<Conversation> out;

  auto make_record = [&](long i, std::size_t n_ingredients, bool facts, bool masks,
                         std::mt19937_64& rng) {
    FoodRecord r;
    r.record_id = "tiny_" + std::to_string(i);
    auto names = pick_names(rng, n_ingredients);
    std::vector<const MaskImage*> mask_ptrs;
    for (std::size_t k = 0; k < names.size(); ++k) {
      IngredientEntry ing{names[k], {}, {}, {}};
      if (facts) ing.facts = random_facts(rng);
      if (masks) ing.mask = rect_mask(image_size, k, names.size());
      r.ingredients.push_back(std::move(ing));
    }
    if (facts) r.total = sum_facts(r.ingredients);
    for (const auto& ing : r.ingredients)
      if (ing.mask) mask_ptrs.push_back(&*ing.mask);
    r.images.push_back(overhead_handle(
        w.write_image("images/tiny/" + std::to_string(i) + ".ppm", rng, mask_ptrs), image_size));
    return r;
  };

  for (long i = 0; i < 32; ++i) {
    auto rng = make_rng(derive_seed(seed, "tiny_" + std::to_string(i)));
    std::uint64_t conv_seed = derive_seed(seed, 1000 + static_cast<std::uint64_t>(i));
    if (i < 6) {
      FoodRecord r = make_record(i, 2, false, false, rng);
      r.class_label = class_pool()[static_cast<std::size_t>(i)];
      out.push_back(build_classification(r, bank, conv_seed));
    } else if (i < 9) {
      FoodRecord r = make_record(i, 2 + i % 2, false, false, rng);
      out.push_back(build_ingredient(r, bank, conv_seed));
    } else if (i < 12) {
      FoodRecord r = make_record(i, 2, false, false, rng);
      r.recipe = recipe_pool()[static_cast<std::size_t>(i - 9)];
      out.push_back(build_recipe(r, bank, conv_seed));
    } else if (i < 22) {
      FoodRecord r = make_record(i, 1 + i % 2, true, false, rng);
      int pattern = static_cast<int>((i - 12) % 7) + 1;
      out.push_back(build_nutrition(r, pattern, bank, conv_seed));
    } else {
      FoodRecord r = make_record(i, 2 + i % 3, false, true, rng);
      std::vector<std::string> absent;
      std::set<std::string> used;
      for (const auto& ing : r.ingredients) used.insert(canon_name(ing.name));
      for (const auto& name : name_pool())
        if (!used.count(canon_name(name)) && absent.size() < 4) absent.push_back(name);

      if (i < 25) {  // pure one-to-zero refusals
        ReferMixPolicy policy;
        policy.one_to_zero_rate = 1.0;
        policy.allow_hybrid = false;
        out.push_back(search_variant(
            [&](std::uint64_t s, ForgeStats& stats) {
              return build_segmentation(r, policy, absent, bank, s, &stats);
            },
            [](const ForgeStats& s) { return s.one_to_zero == 1 && s.hybrid == 0; }, conv_seed,
            "one-to-zero"));
      } else if (i < 27) {  // hybrid: absent names plus real masks
        ReferMixPolicy policy;
        policy.one_to_zero_rate = 1.0;
        policy.allow_hybrid = true;
        out.push_back(search_variant(
            [&](std::uint64_t s, ForgeStats& stats) {
              return build_segmentation(r, policy, absent, bank, s, &stats);
            },
            [](const ForgeStats& s) { return s.hybrid == 1; }, conv_seed, "hybrid"));
      } else {  // present-only; i < 30 forced one-to-many (>= 2 referred)
        ReferMixPolicy policy;
        policy.one_to_zero_rate = 0.0;
        bool force_many = i < 30;
        out.push_back(search_variant(
            [&](std::uint64_t s, ForgeStats& stats) {
              return build_segmentation(r, policy, absent, bank, s, &stats);
            },
            [&](const ForgeStats& s) {
              if (!force_many) return true;
              for (const auto& [k, n] : s.refer_counts)
                if (k >= 2 && n > 0) return true;
              return s.segment_all > 0;
            },
            conv_seed, "one-to-many"));
      }
    }
  }
  return out;
}

const std::vector<std::string>& synth_ingredient_pool() { return name_pool(); }

}  // namespace umami
