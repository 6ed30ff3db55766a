#pragma once

// Word-level lossless tokenizer. Segmentation is context-free and greedy:
//   - a reserved surface ("<stop>", "<pad>", or any task-token surface)
//     is one atomic piece wherever it appears;
//   - otherwise an optional single leading space fuses with a following
//     alphanumeric run (" fish" is one piece);
//   - anything else is a single character piece.
// Concatenating the pieces reproduces the input byte-for-byte, which makes
// detokenize(tokenize(x)) == x structural rather than statistical.

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "umami/datamodel.hpp"

namespace umami {

class Vocabulary {
 public:
  static constexpr long kPadId = 0;
  static constexpr long kStopId = 1;

  // Pure segmentation; needs no vocabulary.
  static std::vector<std::string> segment(std::string_view text);

  // Specials + sorted unique pieces of `texts`. Pieces that collide with the
  // reserved task-token grammar are skipped — ids for those come only from
  // extend_vocabulary, keeping task tokens atomic and uniquely owned.
  static Vocabulary build(const std::vector<std::string>& texts);

  long size() const { return static_cast<long>(tokens_.size()); }
  const std::string& token(long id) const;
  std::optional<long> id_of(std::string_view piece) const;

  // DataError on any piece outside the vocabulary.
  std::vector<long> encode(std::string_view text) const;
  std::string decode(const std::vector<long>& ids) const;

  // 0 when the vocabulary has not been extended with task tokens.
  int max_indices() const { return max_indices_; }
  std::optional<long> task_token_id(const TaskToken& token) const;
  // nullopt when `id` is not a task token.
  std::optional<TaskToken> task_token_of(long id) const;

  // serialization (checkpoint header): tokens in id order
  const std::vector<std::string>& tokens() const { return tokens_; }
  static Vocabulary from_tokens(std::vector<std::string> tokens, int max_indices);

 private:
  friend Vocabulary extend_vocabulary(const Vocabulary& base, int max_indices);
  void index_tokens();
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, long> index_;
  int max_indices_ = 0;
};

// Appends task-token ids to a base vocabulary: 5 dish-level tokens, then for
// each index i in 1..max_indices the five ingredient-level tokens, then
// max_indices seg tokens — 5 + 5*max_indices + max_indices new ids.
// ConfigError if a surface already has an id (collision).
Vocabulary extend_vocabulary(const Vocabulary& base, int max_indices);

// ---- training render ---------------------------------------------------------

// One conversation flattened to the training sequence:
//   {system}<stop>\nUSER: {q}<stop>\nASSISTANT: {a}<stop>\n...
// Loss spans cover exactly each assistant answer's tokens (including the
// joining space fused into its first word) plus the answer's <stop>.
struct TaskTokenSite {
  long text_pos = 0;  // index into ids
  TaskToken token;
  TokenLabel label;
};

struct TurnSpan {
  Speaker speaker = Speaker::user;
  long begin = 0;  // [begin,end) over ids; covers the full rendered turn
  long end = 0;
  long answer_begin = 0;  // assistant turns: loss span [answer_begin, answer_end)
  long answer_end = 0;
};

struct RenderedSample {
  std::vector<long> ids;
  std::vector<std::pair<long, long>> loss_spans;  // [begin,end) into ids
  std::vector<TaskTokenSite> sites;
  std::vector<TurnSpan> turn_spans;
  std::optional<ImageHandle> image;  // from the first user turn
  std::string rendered_text;         // exact flattened string
  TaskTag task_tag = TaskTag::classification;
  std::string source_record;
};

RenderedSample render_for_training(const Conversation& conv, const Vocabulary& vocab);

}  // namespace umami
