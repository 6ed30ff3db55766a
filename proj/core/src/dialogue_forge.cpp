#include "umami/dialogue_forge.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <set>

#include <httplib.h>

#include <json.hpp>

#include "umami/common.hpp"
#include "umami/instruction_forge.hpp"
#include "umami/templates.hpp"

namespace umami {

const std::array<std::string, 7> kDialogueTopics = {
    "Nutrition and Ingredients",
    "Health and Diseases",
    "Calorie Calculation",
    "Metabolism",
    "Dietary Preferences and Allergies",
    "Dietary Planning",
    "Food Pairing and Substitution",
};

TopicRoundPolicy TopicRoundPolicy::defaults() {
  TopicRoundPolicy p;
  p.dialogue_bands = {{1, 3, 1, 3}, {4, 10, 3, 4}, {11, std::nullopt, 7, 5}};
  p.reasonseg_bands = {{3, 3, 0, 3}, {4, 10, 0, 4}, {11, std::nullopt, 0, 5}};
  return p;
}

namespace {

void validate_bands(const std::vector<TopicRoundBand>& bands, const char* which, bool topical) {
  if (bands.empty()) throw ConfigError(std::string(which) + " bands are empty");
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const auto& b = bands[i];
    bool last = i + 1 == bands.size();
    if (!last && !b.hi)
      throw ConfigError(std::string(which) + " bands: only the final band may be unbounded");
    if (last && b.hi) throw ConfigError(std::string(which) + " bands: final band must be unbounded");
    if (b.hi && *b.hi < b.lo) throw ConfigError(std::string(which) + " bands: hi below lo");
    if (!last && bands[i + 1].lo != *b.hi + 1)
      throw ConfigError(std::string(which) + " bands must tile ingredient counts without gaps");
    if (b.rounds < 1) throw ConfigError(std::string(which) + " bands: rounds must be >= 1");
    if (topical && (b.topics < 1 || b.topics > 7))
      throw ConfigError(std::string(which) + " bands: topics must lie in 1..7");
  }
}

const TopicRoundBand* find_band(const std::vector<TopicRoundBand>& bands, std::size_t count) {
  for (const auto& b : bands)
    if (count >= b.lo && (!b.hi || count <= *b.hi)) return &b;
  return nullptr;  // below the first band: rejection
}

std::size_t masked_count(const FoodRecord& record) {
  std::size_t n = 0;
  for (const auto& entry : record.ingredients)
    if (entry.mask) ++n;
  return n;
}

std::string dish_name(const FoodRecord& record) {
  return record.class_label ? *record.class_label : record.record_id;
}

// "mass 350 g, calories 560 kcal, fat 20 g, carbohydrates 45 g, protein 30 g"
std::string facts_line(const NutritionFacts& f) {
  return "mass " + format_double(f.mass) + " g, calories " + format_double(f.calories) +
         " kcal, fat " + format_double(f.fat) + " g, carbohydrates " +
         format_double(f.carbohydrate) + " g, protein " + format_double(f.protein) + " g";
}

Conversation conversation_shell(const FoodRecord& record, TaskTag tag) {
  Conversation conv;
  conv.task_tag = tag;
  conv.source_record = record.record_id;
  Turn system;
  system.speaker = Speaker::system;
  system.text = forge::TemplateBank::builtin().system_message;
  conv.turns.push_back(std::move(system));
  return conv;
}

// Splits a response into alternating Q/A pair texts; shared by both parsers.
std::vector<std::pair<std::string, std::string>> split_rounds(const std::string& response,
                                                              int rounds) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::optional<std::string> pending_q;
  for (const auto& line : split_lines(response)) {
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    if (starts_with(line, "Q: ")) {
      if (pending_q) throw DataError("unbalanced Q/A: question follows unanswered question");
      pending_q = line.substr(3);
    } else if (starts_with(line, "A: ")) {
      if (!pending_q) throw DataError("unbalanced Q/A: answer without a question");
      pairs.emplace_back(*pending_q, line.substr(3));
      pending_q.reset();
    } else {
      throw DataError("stray line, expected 'Q: ' or 'A: ' prefix: " + line);
    }
  }
  if (pending_q) throw DataError("unbalanced Q/A: trailing unanswered question");
  if (static_cast<int>(pairs.size()) != rounds)
    throw DataError("round-count mismatch: expected " + std::to_string(rounds) + ", found " +
                    std::to_string(pairs.size()));
  return pairs;
}

bool marker_name_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_';
}

// Scans one answer for "<token_name:value>" markers; returns the text with
// markers collapsed to plain token surfaces.
std::string scan_dialogue_markers(const std::string& text, std::map<TaskToken, TokenLabel>& labels) {
  std::string out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] != '<') {
      out += text[i++];
      continue;
    }
    std::size_t p = i + 1;
    while (p < text.size() && marker_name_char(text[p])) ++p;
    if (p == i + 1 || p >= text.size() || text[p] != ':')
      throw DataError("malformed marker near: " + text.substr(i, 24));
    std::string name = text.substr(i + 1, p - i - 1);
    std::size_t close = text.find('>', p);
    if (close == std::string::npos) throw DataError("malformed marker near: " + text.substr(i, 24));
    std::string value_text = text.substr(p + 1, close - p - 1);
    auto token = parse_token_name(name);
    if (!token) throw DataError("unknown token name '" + name + "' in marker");
    if (token->kind == TokenKind::segmentation)
      throw DataError("seg token '" + name + "' cannot carry a numeric marker");
    auto value = parse_double(value_text);
    if (!value) throw DataError("non-numeric value '" + value_text + "' for token '" + name + "'");
    if (labels.count(*token)) throw DataError("duplicate marker for token '" + name + "'");
    labels[*token] = *value;
    out += token_surface(*token);
    i = close + 1;
  }
  return out;
}

// True when the text holds at least one well-formed "<name:value>" marker.
bool contains_marker(const std::string& text) {
  std::map<TaskToken, TokenLabel> scratch;
  try {
    std::string rendered = scan_dialogue_markers(text, scratch);
    (void)rendered;
    return !scratch.empty();
  } catch (const DataError&) {
    return true;  // a broken marker still counts as marker-like content
  }
}

const IngredientEntry* find_ingredient(const FoodRecord& record, std::string_view name) {
  std::string canon = canon_name(name);
  for (const auto& entry : record.ingredients)
    if (canon_name(entry.name) == canon) return &entry;
  return nullptr;
}

constexpr std::string_view kSegMark = "[SEG]";

// Scans one answer for "{name} [SEG]" groups, assigning seg indices from 1 in
// order of first appearance within this answer.
std::string scan_seg_groups(const std::string& text, const FoodRecord& record,
                            std::map<TaskToken, TokenLabel>& labels) {
  std::string out;
  std::set<std::string> seen;
  std::size_t i = 0;
  int next_index = 1;
  while (i < text.size()) {
    char c = text[i];
    if (c == '{') {
      std::size_t close = text.find('}', i);
      if (close == std::string::npos) throw DataError("unbalanced brace near: " + text.substr(i, 24));
      std::string name = text.substr(i + 1, close - i - 1);
      if (text.compare(close + 1, 1 + kSegMark.size(), std::string(" ") + std::string(kSegMark)) != 0)
        throw DataError("brace group without [SEG]: {" + name + "}");
      const IngredientEntry* entry = find_ingredient(record, name);
      if (!entry) throw DataError("unknown ingredient '" + name + "'");
      if (!entry->mask) throw DataError("ingredient '" + name + "' has no mask");
      if (!seen.insert(canon_name(name)).second)
        throw DataError("duplicate ingredient '" + name + "' in one answer");
      TaskToken token = TaskToken::seg(next_index++);
      labels[token] = *entry->mask;
      out += name + " " + token_surface(token);
      i = close + 2 + kSegMark.size();
    } else if (c == '}') {
      throw DataError("unbalanced brace near: " + text.substr(i, 24));
    } else if (text.compare(i, kSegMark.size(), kSegMark) == 0) {
      throw DataError("[SEG] without a preceding brace group");
    } else {
      out += c;
      ++i;
    }
  }
  if (next_index == 1) throw DataError("answer contains no segmentation token");
  return out;
}

}  // namespace

void TopicRoundPolicy::validate() const {
  validate_bands(dialogue_bands, "dialogue", true);
  validate_bands(reasonseg_bands, "reason-seg", false);
}

std::optional<SamplePlan> plan_sample(const FoodRecord& record, Stage2Mode mode,
                                      const TopicRoundPolicy& policy, std::uint64_t seed) {
  policy.validate();
  std::size_t count =
      mode == Stage2Mode::dialogue ? record.ingredients.size() : masked_count(record);
  const auto& bands = mode == Stage2Mode::dialogue ? policy.dialogue_bands : policy.reasonseg_bands;
  const TopicRoundBand* band = find_band(bands, count);
  if (!band) return std::nullopt;
  SamplePlan plan;
  plan.rounds = band->rounds;
  if (mode == Stage2Mode::dialogue) {
    auto rng = make_rng(derive_seed(seed, "topics"));
    auto picks = sample_without_replacement(rng, kDialogueTopics.size(),
                                            static_cast<std::size_t>(band->topics));
    std::sort(picks.begin(), picks.end());  // report in canonical topic order
    for (auto p : picks) plan.topics.push_back(kDialogueTopics[p]);
  }
  return plan;
}

std::string assemble_dialogue_prompt(const FoodRecord& record,
                                     const std::vector<std::string>& topics, int rounds) {
  if (record.ingredients.empty())
    throw DataError("record " + record.record_id + " has no ingredients");
  if (!record.total)
    throw DataError("record " + record.record_id + " has no dish-level nutrition facts");
  for (const auto& entry : record.ingredients)
    if (!entry.facts)
      throw DataError("record " + record.record_id + ": ingredient '" + entry.name +
                      "' has no nutrition facts");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");

  std::string p;
  p += "You are writing training data for a food analysis assistant.\n\n";
  p += "Nutrition description:\n";
  p += "Dish: " + dish_name(record) + ".\n";
  p += "Total: " + facts_line(*record.total) + ".\n";
  for (std::size_t i = 0; i < record.ingredients.size(); ++i) {
    const auto& entry = record.ingredients[i];
    p += "Ingredient " + std::to_string(i + 1) + " (" + entry.name +
         "): " + facts_line(*entry.facts) + ".\n";
  }
  p += "\nTopics to cover: " + join(topics, "; ") + ".\n\n";
  p += "Generate exactly " + std::to_string(rounds) +
       " rounds of dialogue between a curious user and the assistant about this dish, "
       "touching the topics above.\n";
  p += "Write each round as two lines, one starting with \"Q: \" and one starting with \"A: \".\n";
  p += "Whenever an answer states one of the nutrition values above, mark it inline as "
       "<token_name:value>, where token_name is one of total_mass, total_cal, total_carb, "
       "total_fat, total_pro for dish totals, or mass_i, cal_i, carb_i, fat_i, pro_i for "
       "ingredient number i. Introduce ingredient numbers in increasing order starting from 1. "
       "Only mark values that appear in the description.\n\n";
  p += "Example round:\n";
  p += "Q: How many kilocalories are in this serving?\n";
  p += "A: It provides roughly <total_cal:245> kilocalories.";
  return p;
}

std::string assemble_reasonseg_prompt(const FoodRecord& record, int rounds) {
  std::vector<std::string> names;
  for (const auto& entry : record.ingredients)
    if (entry.mask) names.push_back(entry.name);
  if (names.size() < 3)
    throw DataError("record " + record.record_id +
                    " has fewer than three masked ingredients");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");

  std::string p;
  p += "You are writing training data for a food segmentation assistant.\n\n";
  p += "Ingredients to segment: " + join(names, "; ") + ".\n\n";
  p += "Generate exactly " + std::to_string(rounds) +
       " rounds of dialogue between a user and the assistant that reason about the dish and "
       "ground the answers in the image.\n";
  p += "Write each round as two lines, one starting with \"Q: \" and one starting with \"A: \".\n";
  p += "In every answer, wrap each mentioned ingredient name from the list in braces "
       "immediately followed by a space and [SEG], like {name} [SEG]. Each answer must ground "
       "at least one ingredient this way, and only names from the list may be wrapped.\n\n";
  p += "Example round:\n";
  p += "Q: Which part of this dish provides the most protein?\n";
  p += "A: The {beef} [SEG] provides the most protein.";
  return p;
}

Conversation parse_dialogue_response(const std::string& response, const FoodRecord& record,
                                     int rounds) {
  auto pairs = split_rounds(response, rounds);
  Conversation conv = conversation_shell(record, TaskTag::dialogue);
  for (const auto& [q, a] : pairs) {
    if (contains_marker(q)) throw DataError("marker in question: " + q);
    Turn user;
    user.speaker = Speaker::user;
    user.text = q;
    Turn assistant;
    assistant.speaker = Speaker::assistant;
    assistant.text = scan_dialogue_markers(a, assistant.token_labels);
    conv.turns.push_back(std::move(user));
    conv.turns.push_back(std::move(assistant));
  }
  return conv;
}

Conversation parse_reasonseg_response(const std::string& response, const FoodRecord& record,
                                      int rounds) {
  auto pairs = split_rounds(response, rounds);
  Conversation conv = conversation_shell(record, TaskTag::reason_seg);
  for (const auto& [q, a] : pairs) {
    if (q.find(kSegMark) != std::string::npos)
      throw DataError("segmentation marker in question: " + q);
    Turn user;
    user.speaker = Speaker::user;
    user.text = q;
    Turn assistant;
    assistant.speaker = Speaker::assistant;
    assistant.text = scan_seg_groups(a, record, assistant.token_labels);
    conv.turns.push_back(std::move(user));
    conv.turns.push_back(std::move(assistant));
  }
  return conv;
}

std::string render_dialogue_markers(const Conversation& conv) {
  std::vector<std::string> lines;
  for (std::size_t i = 1; i < conv.turns.size(); ++i) {
    const auto& turn = conv.turns[i];
    if (turn.speaker == Speaker::user) {
      lines.push_back("Q: " + turn.text);
    } else if (turn.speaker == Speaker::assistant) {
      std::string text = turn.text;
      for (const auto& [token, label] : turn.token_labels) {
        const double* value = std::get_if<double>(&label);
        if (!value) continue;
        std::string surface = token_surface(token);
        std::size_t pos = text.find(surface);
        if (pos == std::string::npos) continue;
        text = text.substr(0, pos) + "<" + token_name(token) + ":" + format_double(*value) + ">" +
               text.substr(pos + surface.size());
      }
      lines.push_back("A: " + text);
    }
  }
  return join(lines, "\n");
}

std::string render_reasonseg_markers(const Conversation& conv, const FoodRecord& record) {
  std::vector<std::string> lines;
  for (std::size_t i = 1; i < conv.turns.size(); ++i) {
    const auto& turn = conv.turns[i];
    if (turn.speaker == Speaker::user) {
      lines.push_back("Q: " + turn.text);
      continue;
    }
    if (turn.speaker != Speaker::assistant) continue;
    std::string text = turn.text;
    for (const auto& [token, label] : turn.token_labels) {
      if (token.kind != TokenKind::segmentation) continue;
      std::string surface = token_surface(token);
      std::size_t pos = text.find(surface);
      if (pos == std::string::npos || pos < 2) continue;
      // the name sits right before " <seg_i>"; take the longest matching one
      std::size_t best = 0;
      for (const auto& entry : record.ingredients) {
        const auto& name = entry.name;
        if (name.size() + 1 > pos || name.size() < best) continue;
        if (text.compare(pos - name.size() - 1, name.size() + 1, name + " ") == 0)
          best = name.size();
      }
      if (best == 0) continue;
      std::size_t name_at = pos - best - 1;
      text = text.substr(0, name_at) + "{" + text.substr(name_at, best) + "} " +
             std::string(kSegMark) + text.substr(pos + surface.size());
    }
    lines.push_back("A: " + text);
  }
  return join(lines, "\n");
}

// ---- mock backend -----------------------------------------------------------

namespace {

// Pulls the substring between `pre` and `post`, advancing `pos` past `post`.
std::string between(const std::string& s, std::string_view pre, std::string_view post,
                    std::size_t& pos) {
  std::size_t a = s.find(pre, pos);
  if (a == std::string::npos) throw DataError("unrecognized prompt shape");
  a += pre.size();
  std::size_t b = post.empty() ? s.size() : s.find(post, a);
  if (b == std::string::npos) throw DataError("unrecognized prompt shape");
  pos = b + post.size();
  return s.substr(a, b - a);
}

struct DescLine {
  std::string name;  // empty for the dish total
  std::array<std::string, 5> values;  // mass, cal, fat, carb, pro as rendered
};

DescLine parse_desc_values(const std::string& line, std::size_t pos) {
  DescLine d;
  d.values[0] = between(line, "mass ", " g, calories ", pos);
  pos -= std::string_view(" g, calories ").size();
  d.values[1] = between(line, " g, calories ", " kcal, fat ", pos);
  pos -= std::string_view(" kcal, fat ").size();
  d.values[2] = between(line, " kcal, fat ", " g, carbohydrates ", pos);
  pos -= std::string_view(" g, carbohydrates ").size();
  d.values[3] = between(line, " g, carbohydrates ", " g, protein ", pos);
  pos -= std::string_view(" g, protein ").size();
  d.values[4] = between(line, " g, protein ", " g.", pos);
  return d;
}

int parse_round_count(const std::vector<std::string>& lines) {
  for (const auto& line : lines) {
    if (!starts_with(line, "Generate exactly ")) continue;
    std::string_view rest = std::string_view(line).substr(17);
    int rounds = 0;
    auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), rounds);
    if (ec != std::errc() || rounds < 1) throw DataError("unrecognized prompt shape");
    return rounds;
  }
  throw DataError("unrecognized prompt shape");
}

std::string mock_dialogue(const std::vector<std::string>& lines, int rounds,
                          std::mt19937_64& rng) {
  DescLine total;
  std::vector<DescLine> ingredients;
  for (const auto& line : lines) {
    if (starts_with(line, "Total: ")) {
      total = parse_desc_values(line, 0);
    } else if (starts_with(line, "Ingredient ")) {
      std::size_t pos = 0;
      DescLine d;
      d.name = between(line, " (", "): ", pos);
      DescLine vals = parse_desc_values(line, pos);
      d.values = vals.values;
      ingredients.push_back(std::move(d));
    }
  }
  if (total.values[0].empty()) throw DataError("unrecognized prompt shape");

  static const std::vector<std::string> q_cal = {
      "How many kilocalories does this dish provide in total?",
      "What is the total calorie content of this dish?"};
  static const std::vector<std::string> q_mass = {
      "What is the total mass of the dish, and how much protein does it contain?",
      "How heavy is this dish and what is its protein content?"};

  std::vector<std::string> out;
  for (int r = 1; r <= rounds; ++r) {
    if (r == 1) {
      out.push_back("Q: " + q_cal[next_index(rng, q_cal.size())]);
      out.push_back("A: The dish provides about <total_cal:" + total.values[1] +
                    "> kilocalories in total.");
    } else if (r == 2) {
      out.push_back("Q: " + q_mass[next_index(rng, q_mass.size())]);
      out.push_back("A: It weighs <total_mass:" + total.values[0] + "> grams and contains <total_pro:" +
                    total.values[4] + "> grams of protein.");
    } else {
      std::size_t j = static_cast<std::size_t>(r) - 2;
      if (j <= ingredients.size()) {
        const auto& ing = ingredients[j - 1];
        std::string idx = std::to_string(j);
        if (next_index(rng, 2) == 0)
          out.push_back("Q: Tell me about the nutrition of the " + ing.name + ".");
        else
          out.push_back("Q: What does the " + ing.name + " contribute nutritionally?");
        out.push_back("A: The " + ing.name + " weighs <mass_" + idx + ":" + ing.values[0] +
                      "> grams and provides <cal_" + idx + ":" + ing.values[1] +
                      "> kilocalories, including <fat_" + idx + ":" + ing.values[2] +
                      "> grams of fat, <carb_" + idx + ":" + ing.values[3] +
                      "> grams of carbohydrates and <pro_" + idx + ":" + ing.values[4] +
                      "> grams of protein.");
      } else {
        out.push_back("Q: How much fat and carbohydrate does the whole dish contain?");
        out.push_back("A: In total it has <total_fat:" + total.values[2] +
                      "> grams of fat and <total_carb:" + total.values[3] +
                      "> grams of carbohydrates.");
      }
    }
  }
  return join(out, "\n");
}

std::string mock_reasonseg(const std::vector<std::string>& lines, int rounds,
                           std::mt19937_64& rng) {
  std::vector<std::string> names;
  for (const auto& line : lines) {
    if (!starts_with(line, "Ingredients to segment: ")) continue;
    std::string list = line.substr(std::string_view("Ingredients to segment: ").size());
    if (!list.empty() && list.back() == '.') list.pop_back();
    std::size_t pos = 0;
    while (pos < list.size()) {
      std::size_t sep = list.find("; ", pos);
      if (sep == std::string::npos) {
        names.push_back(list.substr(pos));
        break;
      }
      names.push_back(list.substr(pos, sep - pos));
      pos = sep + 2;
    }
  }
  if (names.size() < 2) throw DataError("unrecognized prompt shape");

  std::vector<std::string> out;
  for (int r = 1; r <= rounds; ++r) {
    if (r == 1) {
      out.push_back("Q: Can you identify the main components of this dish?");
      out.push_back("A: The most prominent parts are the {" + names[0] + "} [SEG] and the {" +
                    names[1] + "} [SEG].");
      continue;
    }
    const auto& name = names[static_cast<std::size_t>(r - 1) % names.size()];
    if (next_index(rng, 2) == 0)
      out.push_back("Q: Where is the " + name + " in this image?");
    else
      out.push_back("Q: Can you point out the " + name + "?");
    if (next_index(rng, 2) == 0)
      out.push_back("A: The {" + name + "} [SEG] is visible in the dish.");
    else
      out.push_back("A: Sure, the {" + name + "} [SEG] appears right there.");
  }
  return join(out, "\n");
}

}  // namespace

std::string mock_backend(const std::string& prompt, std::uint64_t seed) {
  auto lines = split_lines(prompt);
  int rounds = parse_round_count(lines);
  auto rng = make_rng(derive_seed(seed, "mock"));
  for (const auto& line : lines) {
    if (line == "Nutrition description:") return mock_dialogue(lines, rounds, rng);
    if (starts_with(line, "Ingredients to segment: ")) return mock_reasonseg(lines, rounds, rng);
  }
  throw DataError("unrecognized prompt shape");
}

Backend backend_from_env() {
  const char* url = std::getenv("BACKEND_URL");
  if (!url || !*url) throw ConfigError("BACKEND_URL is not set");
  std::string base(url);
  const char* key = std::getenv("BACKEND_KEY");
  std::string bearer = key ? key : "";
  return [base, bearer](const std::string& prompt, std::uint64_t seed) -> std::string {
    httplib::Client client(base);
    httplib::Headers headers;
    if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);
    nlohmann::json body = {{"prompt", prompt}, {"seed", seed}};
    auto res = client.Post("/generate", headers, body.dump(), "application/json");
    if (!res || res->status != 200) throw DataError("backend request failed");
    return res->body;
  };
}

Stage2Result generate_stage2(const FoodRecord& record, Stage2Mode mode,
                             const TopicRoundPolicy& policy, const Backend& backend,
                             std::uint64_t seed, int max_retries) {
  Stage2Result result;
  auto plan = plan_sample(record, mode, policy, seed);
  if (!plan) {
    result.rejection = mode == Stage2Mode::dialogue
                           ? "too few ingredients for a dialogue"
                           : "fewer than three masked ingredients";
    return result;
  }

  std::string prompt;
  try {
    prompt = mode == Stage2Mode::dialogue
                 ? assemble_dialogue_prompt(record, plan->topics, plan->rounds)
                 : assemble_reasonseg_prompt(record, plan->rounds);
  } catch (const DataError& e) {
    result.rejection = e.what();
    return result;
  }

  std::string last_error = "backend produced no response";
  for (int attempt = 1; attempt <= max_retries; ++attempt) {
    result.attempts = attempt;
    try {
      std::string response = backend(prompt, derive_seed(derive_seed(seed, "attempt"),
                                                         static_cast<std::uint64_t>(attempt)));
      Conversation conv = mode == Stage2Mode::dialogue
                              ? parse_dialogue_response(response, record, plan->rounds)
                              : parse_reasonseg_response(response, record, plan->rounds);
      conv.turns[1].images = {select_visual(record, derive_seed(seed, "visual"))};
      auto violations = validate_conversation(conv);
      if (!violations.empty())
        throw DataError("invalid conversation: " + violations.front().field + ": " +
                        violations.front().rule);
      result.conversation = std::move(conv);
      return result;
    } catch (const DataError& e) {
      last_error = e.what();
    }
  }
  result.rejection = last_error;
  return result;
}

}  // namespace umami
