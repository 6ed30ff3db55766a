#pragma once

// Stage-2 forge: builds generation prompts for multi-round nutrition dialogues
// and reasoning-segmentation samples, calls a pluggable text backend (a
// deterministic mock ships with the library), and parses responses back into
// supervised conversations. Parsers are total: any input yields either a
// Conversation or a DataError — never a crash, never a partial accept.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "umami/datamodel.hpp"

namespace umami {

enum class Stage2Mode { dialogue, reason_seg };

// The seven dialogue topics, fixed order.
extern const std::array<std::string, 7> kDialogueTopics;

// How many topics / rounds a sample gets, banded by ingredient count.
struct TopicRoundBand {
  std::size_t lo = 0;                // inclusive
  std::optional<std::size_t> hi;     // inclusive; empty = unbounded
  int topics = 0;                    // unused for reason-seg bands
  int rounds = 0;
};

struct TopicRoundPolicy {
  // dialogue: 1..3 -> 1 topic / 3 rounds, 4..10 -> 3/4, 11up -> 7/5
  std::vector<TopicRoundBand> dialogue_bands;
  // reason-seg (counted over masked ingredients): 3 -> 3 rounds, 4..10 -> 4, 11up -> 5
  std::vector<TopicRoundBand> reasonseg_bands;

  static TopicRoundPolicy defaults();
  // Bands must be sorted, non-overlapping and gap-free up to an unbounded
  // tail; counts below the first band are rejections, not errors.
  void validate() const;
};

struct SamplePlan {
  std::vector<std::string> topics;  // empty in reason-seg mode
  int rounds = 0;
};

// Plans one record: topic subset (seeded draw without replacement, reported in
// canonical topic order) and round count. Returns nullopt when the record is
// rejected (too few ingredients for its mode).
std::optional<SamplePlan> plan_sample(const FoodRecord& record, Stage2Mode mode,
                                      const TopicRoundPolicy& policy, std::uint64_t seed);

// ---- prompt assembly -------------------------------------------------------

// Dialogue prompt: nutrition description (dish totals + per-ingredient lines,
// values with units), topic list, exact round count, the <token_name:value>
// marker instruction, and one worked example. Throws DataError when the record
// lacks totals or any ingredient lacks facts.
std::string assemble_dialogue_prompt(const FoodRecord& record,
                                     const std::vector<std::string>& topics, int rounds);

// Reason-seg prompt: masked ingredient list, round count, the "{name} [SEG]"
// marking instruction, one worked example. Throws DataError when fewer than
// three ingredients carry masks.
std::string assemble_reasonseg_prompt(const FoodRecord& record, int rounds);

// ---- response parsing ------------------------------------------------------

// Parses "Q:"/"A:" alternating lines; markers "<token_name:value>" in answers
// become task-token surfaces with the value moved into token_labels.
// DataError on: stray lines, unbalanced Q/A, round-count mismatch, markers in
// questions, malformed markers, unknown token names, non-numeric values,
// duplicate markers within an answer.
Conversation parse_dialogue_response(const std::string& response, const FoodRecord& record,
                                     int rounds);

// Parses "{name} [SEG]" occurrences into "name <seg_i>", indices assigned per
// answer in order of first appearance; labels map each seg token to that
// ingredient's mask. DataError on: unknown or unmasked ingredient names,
// braces without [SEG], [SEG] without a brace group, answers with zero seg
// tokens, duplicate names within an answer, unbalanced braces.
Conversation parse_reasonseg_response(const std::string& response, const FoodRecord& record,
                                      int rounds);

// Inverse renderings used by the round-trip tests: reinsert labels to
// reconstruct the raw backend response byte-for-byte.
std::string render_dialogue_markers(const Conversation& conv);
std::string render_reasonseg_markers(const Conversation& conv, const FoodRecord& record);

// ---- backends --------------------------------------------------------------

using Backend = std::function<std::string(const std::string& prompt, std::uint64_t seed)>;

// Deterministic stand-in for a remote LLM: recognizes the two prompt shapes
// assembled above and answers with values copied verbatim from the prompt.
// DataError on any other prompt shape.
std::string mock_backend(const std::string& prompt, std::uint64_t seed);

// Remote adapter configured by BACKEND_URL / BACKEND_KEY. Never exercised in
// tests; ConfigError if BACKEND_URL is unset.
Backend backend_from_env();

// ---- driver ----------------------------------------------------------------

struct Stage2Result {
  std::optional<Conversation> conversation;  // engaged on success
  std::string rejection;                     // reason when not engaged
  int attempts = 0;
};

// plan -> assemble -> backend -> parse -> validate, retrying malformed
// responses up to max_retries times before skipping with a reason.
Stage2Result generate_stage2(const FoodRecord& record, Stage2Mode mode,
                             const TopicRoundPolicy& policy, const Backend& backend,
                             std::uint64_t seed, int max_retries = 3);

}  // namespace umami
