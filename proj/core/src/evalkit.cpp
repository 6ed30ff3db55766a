#include "umami/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <json.hpp>

#include "umami/common.hpp"

namespace umami {

namespace {

std::pair<long, long> pair_counts(const MaskImage& pred, const MaskImage& target) {
  if (pred.height != target.height || pred.width != target.width)
    throw DataError("mask pair shape mismatch");
  long inter = 0, uni = 0;
  for (std::size_t i = 0; i < target.values.size(); ++i) {
    bool p = pred.values[i] != 0;
    bool t = target.values[i] != 0;
    inter += p && t;
    uni += p || t;
  }
  return {inter, uni};
}

void check_pairs(const SegEvalSample& s) {
  if (s.predicted.size() != s.targets.size())
    throw DataError("sample has unmatched predicted/target masks");
}

}  // namespace

double ciou(const std::vector<SegEvalSample>& samples) {
  long inter = 0, uni = 0;
  for (const auto& s : samples) {
    check_pairs(s);
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      auto [pi, pu] = pair_counts(s.predicted[i], s.targets[i]);
      inter += pi;
      uni += pu;
    }
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double giou(const std::vector<SegEvalSample>& samples) {
  double sum = 0.0;
  long counted = 0;
  for (const auto& s : samples) {
    check_pairs(s);
    if (s.targets.empty()) continue;  // refusal-only query: no masks to score
    double acc = 0.0;
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      auto [pi, pu] = pair_counts(s.predicted[i], s.targets[i]);
      acc += pu == 0 ? 1.0 : static_cast<double>(pi) / static_cast<double>(pu);
    }
    sum += acc / static_cast<double>(s.targets.size());
    ++counted;
  }
  return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

ResponseAccuracy response_accuracy(const std::vector<SegEvalSample>& samples) {
  ResponseAccuracy out;
  long existent_ok = 0, absent_ok = 0;
  for (const auto& s : samples) {
    if (s.refusal_expected.empty()) continue;
    auto predicted = [&](std::size_t i) {
      return i < s.refusal_predicted.size() && s.refusal_predicted[i];
    };
    bool any_existing = false, all_absent = true;
    for (bool expected : s.refusal_expected) {
      any_existing = any_existing || !expected;
      all_absent = all_absent && expected;
    }
    if (any_existing) {
      ++out.existent_queries;
      bool ok = true;
      for (std::size_t i = 0; i < s.refusal_expected.size(); ++i)
        if (!s.refusal_expected[i] && predicted(i)) ok = false;
      existent_ok += ok;
    }
    if (all_absent) {
      ++out.absent_queries;
      bool ok = true;
      for (std::size_t i = 0; i < s.refusal_expected.size(); ++i)
        if (!predicted(i)) ok = false;
      absent_ok += ok;
    }
  }
  if (out.existent_queries > 0)
    out.acc_existent = static_cast<double>(existent_ok) / static_cast<double>(out.existent_queries);
  if (out.absent_queries > 0)
    out.acc_absent = static_cast<double>(absent_ok) / static_cast<double>(out.absent_queries);
  return out;
}

// ---- scalar and set metrics ----------------------------------------------------------

NutritionMetric nutrition_metrics(const std::vector<double>& predictions,
                                  const std::vector<double>& targets) {
  if (predictions.size() != targets.size())
    throw DataError("nutrition_metrics: length mismatch");
  if (predictions.empty()) throw DataError("nutrition_metrics: needs at least one pair");
  double err = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    err += std::abs(predictions[i] - targets[i]);
    mean += targets[i];
  }
  double n = static_cast<double>(targets.size());
  err /= n;
  mean /= n;
  if (mean == 0.0) throw DataError("nutrition_metrics: zero field mean, percentage undefined");
  return {err, err / mean * 100.0};
}

SetMetric ingredient_set_metrics_single(const std::vector<std::string>& predicted,
                                        const std::vector<std::string>& target) {
  std::set<std::string> p, t;
  for (const auto& name : predicted)
    if (!canon_name(name).empty()) p.insert(canon_name(name));
  for (const auto& name : target)
    if (!canon_name(name).empty()) t.insert(canon_name(name));
  if (p.empty() && t.empty()) return {1.0, 1.0};
  long inter = 0;
  for (const auto& name : p) inter += t.count(name);
  long uni = static_cast<long>(p.size() + t.size()) - inter;
  SetMetric m;
  m.iou = static_cast<double>(inter) / static_cast<double>(uni);
  m.f1 = 2.0 * static_cast<double>(inter) / static_cast<double>(p.size() + t.size());
  return m;
}

SetMetric ingredient_set_metrics(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& samples) {
  if (samples.empty()) return {0.0, 0.0};
  SetMetric acc;
  for (const auto& [p, t] : samples) {
    SetMetric m = ingredient_set_metrics_single(p, t);
    acc.iou += m.iou;
    acc.f1 += m.f1;
  }
  acc.iou /= static_cast<double>(samples.size());
  acc.f1 /= static_cast<double>(samples.size());
  return acc;
}

// ---- text metrics -----------------------------------------------------------------------

std::vector<std::string> bleu_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char raw : text) {
    char c = static_cast<char>(std::tolower(static_cast<unsigned char>(raw)));
    if (std::isalnum(static_cast<unsigned char>(c))) {
      current += c;
    } else {
      if (!current.empty()) {
        tokens.push_back(current);
        current.clear();
      }
      if (!std::isspace(static_cast<unsigned char>(c))) tokens.push_back(std::string(1, c));
    }
  }
  if (!current.empty()) tokens.push_back(current);
  return tokens;
}

long lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::size_t n = a.size(), m = b.size();
  std::vector<long> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double rouge_l(const std::string& candidate, const std::string& reference) {
  auto c = bleu_tokenize(candidate);
  auto r = bleu_tokenize(reference);
  if (c.empty() || r.empty()) return 0.0;
  double l = static_cast<double>(lcs_length(c, r));
  if (l == 0.0) return 0.0;
  double p = l / static_cast<double>(c.size());
  double rec = l / static_cast<double>(r.size());
  return 2.0 * p * rec / (p + rec);
}

namespace {

std::map<std::string, long> ngram_counts(const std::vector<std::string>& tokens, std::size_t n) {
  std::map<std::string, long> counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key;
    for (std::size_t j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

double bleu4(const std::vector<std::pair<std::string, std::string>>& candidate_reference) {
  long c_len = 0, r_len = 0;
  long match[4] = {0, 0, 0, 0};
  long total[4] = {0, 0, 0, 0};
  for (const auto& [cand, ref] : candidate_reference) {
    auto c = bleu_tokenize(cand);
    auto r = bleu_tokenize(ref);
    c_len += static_cast<long>(c.size());
    r_len += static_cast<long>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      auto cc = ngram_counts(c, n);
      auto rc = ngram_counts(r, n);
      for (const auto& [key, count] : cc) {
        total[n - 1] += count;
        auto it = rc.find(key);
        if (it != rc.end()) match[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (c_len == 0) return 0.0;
  if (match[0] == 0) return 0.0;  // no unigram overlap
  double log_sum = 0.0;
  for (int n = 0; n < 4; ++n) {
    double p;
    if (match[n] > 0) {
      p = static_cast<double>(match[n]) / static_cast<double>(total[n]);
    } else {
      p = static_cast<double>(match[n] + 1) / static_cast<double>(total[n] + 1);
    }
    log_sum += 0.25 * std::log(p);
  }
  double bp = c_len > r_len
                  ? 1.0
                  : std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len));
  return 100.0 * bp * std::exp(log_sum);
}

RecipeMetric recipe_metrics(
    const std::vector<std::pair<std::string, std::string>>& candidate_reference) {
  RecipeMetric m;
  if (candidate_reference.empty()) return m;
  for (const auto& [cand, ref] : candidate_reference) {
    if (bleu_tokenize(ref).empty()) throw DataError("recipe_metrics: empty reference");
    m.rouge_l += rouge_l(cand, ref);
  }
  m.rouge_l /= static_cast<double>(candidate_reference.size());
  m.bleu = bleu4(candidate_reference);
  return m;
}

// ---- prediction parsing --------------------------------------------------------------------

namespace {

const std::vector<std::string>& refusal_phrases() {
  // Core phrases of the refusal answer templates, lowercased.
  static const std::vector<std::string> phrases = {
      "not found in this picture",
      "could not find",
      "there is no ",
      "there are no ",
  };
  return phrases;
}

bool contains_refusal(const std::string& lower_sentence) {
  for (const auto& phrase : refusal_phrases())
    if (lower_sentence.find(phrase) != std::string::npos) return true;
  return false;
}

std::vector<std::string> split_sentences(const std::string& lower) {
  std::vector<std::string> out;
  std::string current;
  for (char c : lower) {
    current += c;
    if (c == '.' || c == '!' || c == '?') {
      out.push_back(current);
      current.clear();
    }
  }
  if (!current.empty()) out.push_back(current);
  return out;
}

// All well-formed task tokens in the text, with their byte offsets.
std::vector<std::pair<std::size_t, TaskToken>> scan_tokens(const std::string& text) {
  std::vector<std::pair<std::size_t, TaskToken>> out;
  std::size_t pos = 0;
  while ((pos = text.find('<', pos)) != std::string::npos) {
    std::size_t end = text.find('>', pos);
    if (end == std::string::npos) break;
    auto token = parse_token(text.substr(pos, end - pos + 1));
    if (token) out.emplace_back(pos, *token);
    pos = pos + 1;
  }
  return out;
}

void parse_classification(const std::string& lower, const ParseContext& ctx,
                          ParsedPrediction& out) {
  std::size_t best_pos = std::string::npos;
  std::size_t best_len = 0;
  for (const auto& name : ctx.class_names) {
    std::string needle = to_lower(name);
    if (needle.empty()) continue;
    std::size_t pos = lower.find(needle);
    if (pos == std::string::npos) continue;
    if (pos < best_pos || (pos == best_pos && needle.size() > best_len)) {
      best_pos = pos;
      best_len = needle.size();
      out.class_name = name;
    }
  }
  out.parsed = best_pos != std::string::npos;
}

void parse_ingredient_list(const std::string& lower, ParsedPrediction& out) {
  std::string body = lower;
  auto cut_after = [&](const std::string& marker) {
    std::size_t pos = body.find(marker);
    if (pos != std::string::npos) body = body.substr(pos + marker.size());
  };
  if (body.find(':') != std::string::npos) {
    body = body.substr(body.find(':') + 1);
  } else {
    for (const char* marker : {" are ", " contains ", " made with ", " include "}) {
      if (body.find(marker) != std::string::npos) {
        cut_after(marker);
        break;
      }
    }
  }
  while (!body.empty() && (body.back() == '.' || body.back() == ' ')) body.pop_back();
  // split on commas and "and"
  std::vector<std::string> parts;
  std::string current;
  std::size_t i = 0;
  while (i < body.size()) {
    if (body[i] == ',') {
      parts.push_back(current);
      current.clear();
      ++i;
    } else if (body.compare(i, 5, " and ") == 0) {
      parts.push_back(current);
      current.clear();
      i += 5;
    } else {
      current += body[i];
      ++i;
    }
  }
  parts.push_back(current);
  for (const auto& part : parts) {
    std::string name = canon_name(part);
    if (!name.empty()) out.ingredient_names.push_back(name);
  }
  out.parsed = !out.ingredient_names.empty();
}

void parse_segmentation(const std::string& lower, const ParseContext& ctx,
                        ParsedPrediction& out) {
  auto tokens = scan_tokens(lower);
  for (const auto& [pos, token] : tokens)
    if (token.kind == TokenKind::segmentation) out.seg_tokens.push_back(token);

  auto sentences = split_sentences(lower);
  bool all_resolved = !ctx.referred_names.empty();
  for (const auto& raw_name : ctx.referred_names) {
    SegAssignment a;
    a.name = canon_name(raw_name);
    std::size_t sentence_start = 0;
    bool found = false;
    for (const auto& sentence : sentences) {
      std::size_t name_pos = sentence.find(a.name);
      if (!a.name.empty() && name_pos != std::string::npos) {
        found = true;
        if (contains_refusal(sentence)) {
          a.refused = true;
        } else {
          // first seg token after the name within this sentence
          std::size_t abs_name = sentence_start + name_pos;
          for (const auto& [tpos, token] : tokens) {
            if (token.kind != TokenKind::segmentation) continue;
            if (tpos >= abs_name && tpos < sentence_start + sentence.size()) {
              a.token = token;
              break;
            }
          }
        }
        break;
      }
      sentence_start += sentence.size();
    }
    if (!found || (!a.refused && !a.token)) all_resolved = false;
    out.assignments.push_back(std::move(a));
  }
  out.parsed = ctx.referred_names.empty() ? !out.seg_tokens.empty() : all_resolved;
}

void parse_nutrition(const std::string& text, const ParseContext& ctx, ParsedPrediction& out) {
  for (const auto& [pos, token] : scan_tokens(text)) {
    if (token.kind == TokenKind::segmentation) continue;
    auto it = ctx.token_values.find(token);
    if (it != ctx.token_values.end())
      out.values[token] = it->second;
    else
      out.values[token] = 0.0;
    out.parsed = true;
  }
}

}  // namespace

ParsedPrediction parse_prediction(const std::string& text, TaskTag task, const ParseContext& ctx) {
  ParsedPrediction out;
  std::string lower = to_lower(text);
  switch (task) {
    case TaskTag::classification:
      parse_classification(lower, ctx, out);
      break;
    case TaskTag::ingredient:
      parse_ingredient_list(lower, out);
      break;
    case TaskTag::recipe:
      out.recipe_text = text;
      out.parsed = !bleu_tokenize(text).empty();
      break;
    case TaskTag::nutrition:
    case TaskTag::dialogue:
      parse_nutrition(text, ctx, out);
      break;
    case TaskTag::segmentation:
    case TaskTag::reason_seg:
      parse_segmentation(lower, ctx, out);
      break;
  }
  return out;
}

// ---- report ------------------------------------------------------------------------------

namespace {

using json = nlohmann::ordered_json;

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

std::string render_report_human(const MetricReport& report) {
  std::string out;
  if (!report.nutrition.empty()) {
    out += "== nutrition ==\n";
    out += pad("field", 12) + pad("MAE", 14) + pad("MAE%", 14) + "n\n";
    for (const auto& row : report.nutrition)
      out += pad(row.field, 12) + pad(fmt(row.mae), 14) + pad(fmt(row.mae_pct), 14) +
             std::to_string(row.count) + "\n";
  }
  if (!report.segmentation.empty() || report.one_to_zero_acc) {
    out += "== segmentation ==\n";
    out += pad("refer@k", 12) + pad("cIoU", 14) + pad("Acc", 14) + "queries\n";
    for (const auto& row : report.segmentation)
      out += pad("refer@" + std::to_string(row.refer_k), 12) + pad(fmt(row.ciou), 14) +
             pad(fmt(row.acc), 14) + std::to_string(row.queries) + "\n";
    if (report.one_to_zero_acc)
      out += "one-to-zero Acc: " + fmt(*report.one_to_zero_acc) + " (" +
             std::to_string(report.one_to_zero_queries) + " queries)\n";
  }
  if (report.reasoning) {
    out += "== reasoning ==\n";
    out += "gIoU " + fmt(report.reasoning->giou) + "  cIoU " + fmt(report.reasoning->ciou) +
           "  (" + std::to_string(report.reasoning->samples) + " samples)\n";
  }
  if (report.vqa) {
    const auto& v = *report.vqa;
    out += "== vqa ==\n";
    out += "top-1 " + fmt(v.top1) + " (" + std::to_string(v.classification_n) + ")  ";
    out += "ingredient IoU " + fmt(v.ingredient_iou) + " F1 " + fmt(v.ingredient_f1) + " (" +
           std::to_string(v.ingredient_n) + ")  ";
    out += "BLEU " + fmt(v.bleu) + " Rouge-L " + fmt(v.rouge_l) + " (" +
           std::to_string(v.recipe_n) + ")\n";
  }
  if (out.empty()) out = "(empty report)\n";
  return out;
}

std::string report_to_json(const MetricReport& report) {
  json j;
  j["nutrition"] = json::array();
  for (const auto& row : report.nutrition)
    j["nutrition"].push_back(json{{"field", row.field},
                                  {"mae", row.mae},
                                  {"mae_pct", row.mae_pct},
                                  {"count", row.count}});
  j["segmentation"] = json::array();
  for (const auto& row : report.segmentation)
    j["segmentation"].push_back(json{{"refer_k", row.refer_k},
                                     {"ciou", row.ciou},
                                     {"acc", row.acc},
                                     {"queries", row.queries}});
  if (report.one_to_zero_acc) {
    j["one_to_zero"] = json{{"acc", *report.one_to_zero_acc},
                            {"queries", report.one_to_zero_queries}};
  }
  if (report.reasoning) {
    j["reasoning"] = json{{"giou", report.reasoning->giou},
                          {"ciou", report.reasoning->ciou},
                          {"samples", report.reasoning->samples}};
  }
  if (report.vqa) {
    const auto& v = *report.vqa;
    j["vqa"] = json{{"top1", v.top1},
                    {"ingredient_iou", v.ingredient_iou},
                    {"ingredient_f1", v.ingredient_f1},
                    {"bleu", v.bleu},
                    {"rouge_l", v.rouge_l},
                    {"classification_n", v.classification_n},
                    {"ingredient_n", v.ingredient_n},
                    {"recipe_n", v.recipe_n}};
  }
  return j.dump(2) + "\n";
}

MetricReport report_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("report is not valid JSON");
  MetricReport report;
  try {
    for (const auto& row : j.at("nutrition"))
      report.nutrition.push_back({row.at("field").get<std::string>(), row.at("mae").get<double>(),
                                  row.at("mae_pct").get<double>(), row.at("count").get<long>()});
    for (const auto& row : j.at("segmentation"))
      report.segmentation.push_back({row.at("refer_k").get<long>(), row.at("ciou").get<double>(),
                                     row.at("acc").get<double>(), row.at("queries").get<long>()});
    if (j.contains("one_to_zero")) {
      report.one_to_zero_acc = j.at("one_to_zero").at("acc").get<double>();
      report.one_to_zero_queries = j.at("one_to_zero").at("queries").get<long>();
    }
    if (j.contains("reasoning")) {
      MetricReport::ReasonRow row;
      row.giou = j.at("reasoning").at("giou").get<double>();
      row.ciou = j.at("reasoning").at("ciou").get<double>();
      row.samples = j.at("reasoning").at("samples").get<long>();
      report.reasoning = row;
    }
    if (j.contains("vqa")) {
      MetricReport::VqaRow v;
      const auto& jv = j.at("vqa");
      v.top1 = jv.at("top1").get<double>();
      v.ingredient_iou = jv.at("ingredient_iou").get<double>();
      v.ingredient_f1 = jv.at("ingredient_f1").get<double>();
      v.bleu = jv.at("bleu").get<double>();
      v.rouge_l = jv.at("rouge_l").get<double>();
      v.classification_n = jv.at("classification_n").get<long>();
      v.ingredient_n = jv.at("ingredient_n").get<long>();
      v.recipe_n = jv.at("recipe_n").get<long>();
      report.vqa = v;
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed report: ") + e.what());
  }
  return report;
}

}  // namespace umami
