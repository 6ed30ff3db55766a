#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <string>
#include <vector>

#include "umami/common.hpp"
#include "umami/datamodel.hpp"
#include "umami/tokenizer.hpp"

using namespace umami;

namespace {

std::string join(const std::vector<std::string>& pieces) {
  std::string out;
  for (const auto& p : pieces) out += p;
  return out;
}

Conversation tiny_conversation() {
  Conversation conv;
  conv.task_tag = TaskTag::nutrition;
  conv.source_record = "r";
  Turn sys;
  sys.speaker = Speaker::system;
  sys.text = "You are a food analyst.";
  Turn user;
  user.speaker = Speaker::user;
  user.text = "Estimate the mass. <image>";
  user.images = {{ImageHandle::Role::overhead, "img.ppm", 8, 8}};
  Turn asst;
  asst.speaker = Speaker::assistant;
  asst.text = "The beef weighs <mass_1> grams.";
  asst.token_labels[TaskToken::ingredient(NutritionField::mass, 1)] = 42.0;
  conv.turns = {sys, user, asst};
  return conv;
}

}  // namespace

TEST_CASE("segmentation concatenates back to the input byte-for-byte") {
  std::vector<std::string> inputs = {
      "",
      "hello world",
      " leading space",
      "trailing space ",
      "double  space",
      "punctuation, and; stuff!",
      "numbers 123 mixed4you",
      "<stop> tokens <mass_2> inline<seg_1>",
      "USER: What's in the dish?<stop>\nASSISTANT: rice.<stop>\n",
      "tabs\tand\nnewlines\r\n",
      "unicode caf\xC3\xA9 bytes",
      "<not_a_token> <mass_> <seg_0>",
  };
  for (const auto& text : inputs) {
    CAPTURE(text);
    CHECK(join(Vocabulary::segment(text)) == text);
  }
}

TEST_CASE("a leading space fuses into the following word") {
  auto pieces = Vocabulary::segment("The beef weighs");
  REQUIRE(pieces.size() == 3);
  CHECK(pieces[0] == "The");
  CHECK(pieces[1] == " beef");
  CHECK(pieces[2] == " weighs");
  // a space before punctuation stays alone
  auto p2 = Vocabulary::segment("a ,b");
  REQUIRE(p2.size() == 4);
  CHECK(p2[1] == " ");
  CHECK(p2[2] == ",");
  CHECK(p2[3] == "b");
}

TEST_CASE("reserved surfaces are atomic pieces wherever they appear") {
  auto pieces = Vocabulary::segment("x<stop>y <mass_12>z<seg_3>");
  bool saw_stop = false, saw_mass = false, saw_seg = false;
  for (const auto& p : pieces) {
    if (p == "<stop>") saw_stop = true;
    if (p == "<mass_12>") saw_mass = true;
    if (p == "<seg_3>") saw_seg = true;
  }
  CHECK(saw_stop);
  CHECK(saw_mass);
  CHECK(saw_seg);
  // near-misses fall back to character pieces
  auto miss = Vocabulary::segment("<mass_0>");
  CHECK(miss.size() > 1);
}

TEST_CASE("segmenting a concatenation equals concatenating segmentations at piece boundaries") {
  // every piece ends at a non-alnum boundary, so shard-wise segmentation is safe
  std::string a = "USER: What is this?<stop>\n";
  std::string b = "ASSISTANT: fried rice.<stop>\n";
  auto ab = Vocabulary::segment(a + b);
  auto sep_a = Vocabulary::segment(a);
  auto sep_b = Vocabulary::segment(b);
  sep_a.insert(sep_a.end(), sep_b.begin(), sep_b.end());
  CHECK(ab == sep_a);
}

TEST_CASE("encode then decode is the identity once the vocabulary covers the text") {
  std::vector<std::string> corpus = {
      "You are a food analyst.",
      "USER: Estimate the mass. <image><stop>\n",
      "ASSISTANT: The beef weighs  grams.<stop>\n",
  };
  Vocabulary vocab = Vocabulary::build(corpus);
  for (const auto& text : corpus) {
    auto ids = vocab.encode(text);
    CHECK(vocab.decode(ids) == text);
  }
  CHECK_THROWS_AS(vocab.encode("word_not_in_corpus_zzz"), DataError);
}

TEST_CASE("specials hold their pinned ids") {
  Vocabulary vocab = Vocabulary::build({"a b"});
  CHECK(Vocabulary::kPadId == 0);
  CHECK(Vocabulary::kStopId == 1);
  CHECK(vocab.token(0) == "<pad>");
  CHECK(vocab.token(1) == "<stop>");
  CHECK(vocab.id_of("<pad>") == 0);
  CHECK(vocab.id_of("<stop>") == 1);
}

TEST_CASE("building skips pieces that collide with the task-token grammar") {
  Vocabulary vocab = Vocabulary::build({"text with <mass_1> inside"});
  CHECK_FALSE(vocab.id_of("<mass_1>").has_value());
  CHECK(vocab.max_indices() == 0);
  CHECK_FALSE(vocab.task_token_id(TaskToken::ingredient(NutritionField::mass, 1)).has_value());
}

TEST_CASE("extension appends 6m+5 task ids with dish-first layout") {
  Vocabulary base = Vocabulary::build({"some words here"});
  long before = base.size();
  const int m = 20;
  Vocabulary ext = extend_vocabulary(base, m);
  CHECK(ext.size() == before + 5 + 5 * m + m);  // 125 new ids for m=20
  CHECK(ext.max_indices() == m);

  // dish tokens come first, in canonical field order
  for (int f = 0; f < 5; ++f) {
    auto id = ext.task_token_id(TaskToken::dish(kNutritionFields[static_cast<std::size_t>(f)]));
    REQUIRE(id.has_value());
    CHECK(*id == before + f);
  }
  // then 5 ingredient tokens per index
  for (int i = 1; i <= m; ++i)
    for (int f = 0; f < 5; ++f) {
      auto id = ext.task_token_id(
          TaskToken::ingredient(kNutritionFields[static_cast<std::size_t>(f)], i));
      REQUIRE(id.has_value());
      CHECK(*id == before + 5 + 5 * (i - 1) + f);
    }
  // then seg tokens
  for (int i = 1; i <= m; ++i) {
    auto id = ext.task_token_id(TaskToken::seg(i));
    REQUIRE(id.has_value());
    CHECK(*id == before + 5 + 5 * m + (i - 1));
  }

  // inverse lookup agrees everywhere
  for (long id = 0; id < ext.size(); ++id) {
    auto token = ext.task_token_of(id);
    if (id < before + 0 || id >= before) {
      // covered below
    }
    if (token.has_value()) {
      auto round = ext.task_token_id(*token);
      REQUIRE(round.has_value());
      CHECK(*round == id);
    }
  }
  CHECK_FALSE(ext.task_token_of(0).has_value());
  CHECK_FALSE(ext.task_token_of(before - 1).has_value());
  CHECK(ext.task_token_of(before).has_value());

  // out-of-range indices have no ids
  CHECK_FALSE(ext.task_token_id(TaskToken::seg(m + 1)).has_value());
}

TEST_CASE("vocabulary serialization reproduces lookups") {
  Vocabulary base = Vocabulary::build({"alpha beta gamma"});
  Vocabulary ext = extend_vocabulary(base, 3);
  Vocabulary copy = Vocabulary::from_tokens(ext.tokens(), ext.max_indices());
  CHECK(copy.size() == ext.size());
  CHECK(copy.max_indices() == 3);
  for (long id = 0; id < ext.size(); ++id) CHECK(copy.token(id) == ext.token(id));
  CHECK(copy.task_token_id(TaskToken::seg(2)) == ext.task_token_id(TaskToken::seg(2)));
  CHECK(copy.id_of(" beta") == ext.id_of(" beta"));
}

TEST_CASE("render flattens turns with speaker prefixes and stop separators") {
  Conversation conv = tiny_conversation();
  std::vector<std::string> corpus = {
      "You are a food analyst.<stop>\n"
      "USER: Estimate the mass. <image><stop>\n"
      "ASSISTANT: The beef weighs <mass_1> grams.<stop>\n"};
  Vocabulary vocab = extend_vocabulary(Vocabulary::build(corpus), 2);
  RenderedSample sample = render_for_training(conv, vocab);

  CHECK(sample.rendered_text == corpus[0]);
  CHECK(vocab.decode(sample.ids) == sample.rendered_text);
  CHECK(sample.task_tag == TaskTag::nutrition);
  CHECK(sample.source_record == "r");
  REQUIRE(sample.image.has_value());
  CHECK(sample.image->path == "img.ppm");

  REQUIRE(sample.turn_spans.size() == 3);
  CHECK(sample.turn_spans[0].speaker == Speaker::system);
  CHECK(sample.turn_spans[0].begin == 0);
  for (std::size_t i = 1; i < sample.turn_spans.size(); ++i)
    CHECK(sample.turn_spans[i].begin == sample.turn_spans[i - 1].end);
  CHECK(sample.turn_spans.back().end == static_cast<long>(sample.ids.size()));
}

TEST_CASE("loss spans cover exactly the assistant answer plus its stop") {
  Conversation conv = tiny_conversation();
  Vocabulary vocab = extend_vocabulary(
      Vocabulary::build({"You are a food analyst.<stop>\n"
                         "USER: Estimate the mass. <image><stop>\n"
                         "ASSISTANT: The beef weighs <mass_1> grams.<stop>\n"}),
      2);
  RenderedSample sample = render_for_training(conv, vocab);
  REQUIRE(sample.loss_spans.size() == 1);
  auto [begin, end] = sample.loss_spans[0];
  const TurnSpan& asst = sample.turn_spans[2];
  CHECK(begin == asst.answer_begin);
  CHECK(end == asst.answer_end);

  // the span decodes to the answer text (leading space fused) plus <stop>
  std::vector<long> span_ids(sample.ids.begin() + begin, sample.ids.begin() + end);
  CHECK(vocab.decode(span_ids) == " The beef weighs <mass_1> grams.<stop>");

  // ids before the span decode to the prompt prefix ending in "ASSISTANT:"
  std::vector<long> prefix(sample.ids.begin(), sample.ids.begin() + begin);
  std::string prefix_text = vocab.decode(prefix);
  CHECK(prefix_text.substr(prefix_text.size() - 10) == "ASSISTANT:");
}

TEST_CASE("task token sites point at their ids and carry labels") {
  Conversation conv = tiny_conversation();
  Vocabulary vocab = extend_vocabulary(
      Vocabulary::build({"You are a food analyst.<stop>\n"
                         "USER: Estimate the mass. <image><stop>\n"
                         "ASSISTANT: The beef weighs <mass_1> grams.<stop>\n"}),
      2);
  RenderedSample sample = render_for_training(conv, vocab);
  REQUIRE(sample.sites.size() == 1);
  const TaskTokenSite& site = sample.sites[0];
  CHECK(site.token == TaskToken::ingredient(NutritionField::mass, 1));
  CHECK(std::get<double>(site.label) == 42.0);
  CHECK(sample.ids[static_cast<std::size_t>(site.text_pos)] ==
        *vocab.task_token_id(site.token));
}

TEST_CASE("render rejects labels that do not match the answer text") {
  Conversation conv = tiny_conversation();
  Vocabulary vocab = extend_vocabulary(
      Vocabulary::build({"You are a food analyst.<stop>\n"
                         "USER: Estimate the mass. <image><stop>\n"
                         "ASSISTANT: The beef weighs <mass_1> grams.<stop>\n"}),
      2);

  SUBCASE("label present but token missing from text") {
    conv.turns[2].token_labels[TaskToken::seg(1)] = 3.0;
    CHECK_THROWS_AS(render_for_training(conv, vocab), DataError);
  }
  SUBCASE("token in text but label missing") {
    conv.turns[2].token_labels.clear();
    CHECK_THROWS_AS(render_for_training(conv, vocab), DataError);
  }
  SUBCASE("wrong label payload type is a validation violation") {
    conv.turns[2].text = "Mask: <seg_1>";
    conv.turns[2].token_labels.clear();
    conv.turns[2].token_labels[TaskToken::seg(1)] = 1.5;  // should be a MaskImage
    CHECK_FALSE(validate_conversation(conv).empty());
  }
}

TEST_CASE("multi-turn conversations render every exchange in order") {
  Conversation conv;
  conv.task_tag = TaskTag::dialogue;
  conv.source_record = "r2";
  Turn sys;
  sys.speaker = Speaker::system;
  sys.text = "Sys.";
  Turn u1;
  u1.speaker = Speaker::user;
  u1.text = "One?";
  Turn a1;
  a1.speaker = Speaker::assistant;
  a1.text = "First.";
  Turn u2;
  u2.speaker = Speaker::user;
  u2.text = "Two?";
  Turn a2;
  a2.speaker = Speaker::assistant;
  a2.text = "Second.";
  conv.turns = {sys, u1, a1, u2, a2};

  std::string flat =
      "Sys.<stop>\nUSER: One?<stop>\nASSISTANT: First.<stop>\nUSER: Two?<stop>\nASSISTANT: "
      "Second.<stop>\n";
  Vocabulary vocab = Vocabulary::build({flat});
  RenderedSample sample = render_for_training(conv, vocab);
  CHECK(sample.rendered_text == flat);
  REQUIRE(sample.loss_spans.size() == 2);
  CHECK(sample.loss_spans[0].second <= sample.loss_spans[1].first);
  std::vector<long> second(sample.ids.begin() + sample.loss_spans[1].first,
                           sample.ids.begin() + sample.loss_spans[1].second);
  CHECK(vocab.decode(second) == " Second.<stop>");
}

TEST_CASE("fuzzed text survives segment-join round-trips") {
  std::mt19937_64 rng(123);
  const std::string alphabet = "ab <>_123.,\n<stop><mass_1><seg_2>";
  std::vector<std::string> atoms = {"a",  "b",  " ",        "<",        ">",       "_",
                                    "1",  "2",  ".",        ",",        "\n",      "<stop>",
                                    "<mass_1>", "<seg_2>", "<total_cal>", "word", " word"};
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    int n = static_cast<int>(rng() % 20);
    for (int i = 0; i < n; ++i) text += atoms[rng() % atoms.size()];
    CAPTURE(text);
    CHECK(join(Vocabulary::segment(text)) == text);
  }
}
