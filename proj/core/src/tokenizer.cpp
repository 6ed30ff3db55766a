#include "umami/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

namespace umami {

namespace {

bool is_alnum(unsigned char c) { return std::isalnum(c) != 0; }

// Matches a reserved surface starting at `pos`: "<pad>", "<stop>", or a task
// token. Returns its length, 0 if none.
std::size_t reserved_at(std::string_view text, std::size_t pos) {
  if (text[pos] != '<') return 0;
  // name chars: [a-z0-9_], closed by '>'; cap the scan so stray '<' in long
  // text stays O(1)
  std::size_t end = pos + 1;
  std::size_t limit = std::min(text.size(), pos + 16);
  while (end < limit && (std::islower(static_cast<unsigned char>(text[end])) ||
                         std::isdigit(static_cast<unsigned char>(text[end])) || text[end] == '_'))
    ++end;
  if (end >= text.size() || text[end] != '>') return 0;
  std::string_view name = text.substr(pos + 1, end - pos - 1);
  if (name == "pad" || name == "stop" || parse_token_name(name)) return end - pos + 1;
  return 0;
}

}  // namespace

std::vector<std::string> Vocabulary::segment(std::string_view text) {
  std::vector<std::string> pieces;
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::size_t len = reserved_at(text, i); len > 0) {
      pieces.emplace_back(text.substr(i, len));
      i += len;
      continue;
    }
    std::size_t start = i;
    if (text[i] == ' ' && i + 1 < text.size() && is_alnum(static_cast<unsigned char>(text[i + 1]))) {
      ++i;  // space fuses with the following run
    } else if (!is_alnum(static_cast<unsigned char>(text[i]))) {
      pieces.emplace_back(1, text[i]);
      ++i;
      continue;
    }
    while (i < text.size() && is_alnum(static_cast<unsigned char>(text[i]))) ++i;
    pieces.emplace_back(text.substr(start, i - start));
  }
  return pieces;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  std::set<std::string> pieces;
  for (const auto& t : texts)
    for (auto& p : segment(t)) pieces.insert(std::move(p));
  Vocabulary v;
  v.tokens_ = {"<pad>", "<stop>"};
  for (const auto& p : pieces) {
    if (p == "<pad>" || p == "<stop>") continue;
    if (p.size() > 2 && p.front() == '<' && p.back() == '>' && parse_token(p)) continue;
    v.tokens_.push_back(p);
  }
  v.index_tokens();
  return v;
}

void Vocabulary::index_tokens() {
  index_.clear();
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_[tokens_[i]] = static_cast<long>(i);
}

const std::string& Vocabulary::token(long id) const {
  if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<long> Vocabulary::id_of(std::string_view piece) const {
  auto it = index_.find(std::string(piece));
  return it == index_.end() ? std::nullopt : std::optional<long>(it->second);
}

std::vector<long> Vocabulary::encode(std::string_view text) const {
  std::vector<long> ids;
  for (const auto& p : segment(text)) {
    auto id = id_of(p);
    if (!id) throw DataError("token not in vocabulary: \"" + p + "\"");
    ids.push_back(*id);
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<long>& ids) const {
  std::string out;
  for (long id : ids) out += token(id);
  return out;
}

std::optional<long> Vocabulary::task_token_id(const TaskToken& token) const {
  return id_of(token_surface(token));
}

std::optional<TaskToken> Vocabulary::task_token_of(long id) const {
  return parse_token(token(id));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens, int max_indices) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  v.max_indices_ = max_indices;
  if (v.tokens_.size() < 2 || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<stop>")
    throw DataError("vocabulary: specials missing");
  v.index_tokens();
  return v;
}

Vocabulary extend_vocabulary(const Vocabulary& base, int max_indices) {
  if (max_indices < 1) throw ConfigError("extend_vocabulary: max_indices must be >= 1");
  Vocabulary v = base;
  auto push = [&](const TaskToken& t) {
    std::string surface = token_surface(t);
    if (v.id_of(surface)) throw ConfigError("extend_vocabulary: collision on " + surface);
    v.tokens_.push_back(surface);
  };
  for (NutritionField f : kNutritionFields) push(TaskToken::dish(f));
  for (int i = 1; i <= max_indices; ++i)
    for (NutritionField f : kNutritionFields) push(TaskToken::ingredient(f, i));
  for (int i = 1; i <= max_indices; ++i) push(TaskToken::seg(i));
  v.max_indices_ = max_indices;
  v.index_tokens();
  return v;
}

// ---- training render -----------------------------------------------------------

RenderedSample render_for_training(const Conversation& conv, const Vocabulary& vocab) {
  RenderedSample out;
  out.task_tag = conv.task_tag;
  out.source_record = conv.source_record;

  auto append_piece = [&](const std::string& piece) -> std::pair<long, long> {
    long begin = static_cast<long>(out.ids.size());
    auto ids = vocab.encode(piece);
    out.ids.insert(out.ids.end(), ids.begin(), ids.end());
    out.rendered_text += piece;
    return {begin, static_cast<long>(out.ids.size())};
  };

  for (const Turn& turn : conv.turns) {
    TurnSpan span;
    span.speaker = turn.speaker;
    span.begin = static_cast<long>(out.ids.size());
    if (turn.speaker == Speaker::system) {
      append_piece(turn.text);
      append_piece("<stop>");
    } else if (turn.speaker == Speaker::user) {
      append_piece("USER:");
      append_piece(" " + turn.text);
      append_piece("<stop>");
      if (!turn.images.empty()) {
        if (!out.image) out.image = turn.images.front();
      }
    } else {
      append_piece("ASSISTANT:");
      auto [abegin, aend] = append_piece(" " + turn.text);
      auto [sbegin, send] = append_piece("<stop>");
      (void)sbegin;
      span.answer_begin = abegin;
      span.answer_end = send;
      out.loss_spans.push_back({abegin, send});
      // locate task-token sites inside the answer region and attach labels
      for (long pos = abegin; pos < aend; ++pos) {
        auto token = vocab.task_token_of(out.ids[static_cast<std::size_t>(pos)]);
        if (!token) continue;
        auto it = turn.token_labels.find(*token);
        if (it == turn.token_labels.end())
          throw DataError("task token " + token_surface(*token) + " in text without a label");
        out.sites.push_back({pos, *token, it->second});
      }
      // labels without a matching site are silent supervision bugs; refuse
      std::size_t labelled = 0;
      for (long pos = abegin; pos < aend; ++pos)
        if (vocab.task_token_of(out.ids[static_cast<std::size_t>(pos)])) ++labelled;
      if (labelled != turn.token_labels.size())
        throw DataError("token_labels do not match task tokens present in answer text");
    }
    append_piece("\n");
    span.end = static_cast<long>(out.ids.size());
    out.turn_spans.push_back(span);
  }
  return out;
}

}  // namespace umami
