#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "umami/corpus.hpp"
#include "umami/datamodel.hpp"

namespace umami {

// Deterministic synthetic corpus: five datasets with role-appropriate fields
// (classification labels, recipes, nutrition facts with exact totals,
// segmentation masks), PPM images whose pixels encode the record identity,
// and PGM mask files. Everything is derived from `seed`.
struct SynthSpec {
  std::string root;  // output directory; created if missing
  long image_size = 64;
  long records_per_dataset = 12;
  std::uint64_t seed = 0;
};

// Writes images, masks, record shards, and the manifest; returns the manifest
// path (root + "/manifest.json").
std::string make_synth_corpus(const SynthSpec& spec);

// 32 short conversations covering all three loss components: text-only VQA,
// nutrition regression, and segmentation with one-to-many, hybrid, and pure
// one-to-zero queries. Images are written under root; conversation image
// paths are relative to it.
std::vector<Conversation> make_tiny_corpus(const std::string& root, long image_size,
                                           std::uint64_t seed);

// Ingredient names every synthesized corpus draws from (referred or absent).
const std::vector<std::string>& synth_ingredient_pool();

}  // namespace umami
