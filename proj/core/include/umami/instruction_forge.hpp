#pragma once

// Stage-1 instruction forge: turns annotated food records into single-round
// training conversations using the built-in template bank. Every builder is a
// pure function of (record, policy, seed) so regeneration is reproducible.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "umami/datamodel.hpp"
#include "umami/templates.hpp"

namespace umami {

// Controls the referring-segmentation query mix.
struct ReferMixPolicy {
  double one_to_zero_rate = 0.02;   // fraction of seg queries naming only absent items
  std::vector<int> absent_count_ratio = {2, 1, 1};  // weights for 1, 2, 3 absent names
  int max_refer = 20;               // cap on referred ingredient count per query
  int max_absent = 3;               // cap on absent names in a one-to-zero query
  bool allow_hybrid = true;         // absent-draw may also mention present items
  double segall_template_prob = 0.4;  // chance of a segment-everything query
  bool masks_complete = true;       // dataset annotates every ingredient; gates seg-all

  void validate() const;  // throws ConfigError
};

// Counters the forge accumulates for the stats sidecar.
struct ForgeStats {
  std::map<std::string, std::int64_t> template_usage;  // slot name -> picks
  std::int64_t conversations = 0;
  std::int64_t one_to_zero = 0;
  std::int64_t hybrid = 0;
  std::int64_t segment_all = 0;
  std::map<int, std::int64_t> refer_counts;   // referred (present) names per seg query
  std::map<int, std::int64_t> absent_counts;  // absent names per one-to-zero query

  void merge(const ForgeStats& other);
};

// Picks the image a conversation shows: overhead with probability 0.7 when
// frames exist (otherwise always), else a uniformly random frame.
ImageHandle select_visual(const FoodRecord& record, std::uint64_t seed);

// Single-round builders. Each returns a conversation with a system turn, one
// user turn carrying the visual, and one assistant answer. Builders throw
// DataError when the record lacks what the task needs.
Conversation build_classification(const FoodRecord& record, const forge::TemplateBank& bank,
                                  std::uint64_t seed, ForgeStats* stats = nullptr);
Conversation build_ingredient(const FoodRecord& record, const forge::TemplateBank& bank,
                              std::uint64_t seed, ForgeStats* stats = nullptr);
Conversation build_recipe(const FoodRecord& record, const forge::TemplateBank& bank,
                          std::uint64_t seed, ForgeStats* stats = nullptr);

// pattern is 1..7, selecting the question family:
//   1 dish total, 2 single ingredient, 3 dish + per-ingredient breakdown,
//   4 ingredient calories only, 5 total calories only,
//   6 highest-fat/carb/protein ingredient, 7 macronutrient ranking.
Conversation build_nutrition(const FoodRecord& record, int pattern, const forge::TemplateBank& bank,
                             std::uint64_t seed, ForgeStats* stats = nullptr);

// Referring segmentation. absent_vocabulary supplies names guaranteed not in
// the record (the caller draws them from other records' ingredient lists).
Conversation build_segmentation(const FoodRecord& record, const ReferMixPolicy& policy,
                                const std::vector<std::string>& absent_vocabulary,
                                const forge::TemplateBank& bank, std::uint64_t seed,
                                ForgeStats* stats = nullptr);

}  // namespace umami
