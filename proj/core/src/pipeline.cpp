#include "umami/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <utility>

#include "json.hpp"
#include "umami/common.hpp"
#include "umami/corpus.hpp"
#include "umami/dialogue_forge.hpp"
#include "umami/imageio.hpp"
#include "umami/synth.hpp"
#include "umami/tokenizer.hpp"

namespace umami {
namespace {

using ordered_json = nlohmann::ordered_json;

void require_path(const std::string& value, const std::string& key) {
  if (value.empty()) throw ConfigError("paths." + key + " must be set");
}

std::string manifest_path_of(const RunConfig& config) {
  const std::string& c = config.paths.corpus;
  if (c.size() > 5 && c.substr(c.size() - 5) == ".json") return c;
  return c + "/manifest.json";
}

// Exact mirror of the training render's text assembly; lets the vocabulary be
// built from conversations before any vocabulary exists.
std::string flatten_text(const Conversation& conv) {
  std::string out;
  for (const auto& turn : conv.turns) {
    if (turn.speaker == Speaker::system) {
      out += turn.text;
    } else if (turn.speaker == Speaker::user) {
      out += "USER: " + turn.text;
    } else {
      out += "ASSISTANT: " + turn.text;
    }
    out += "<stop>\n";
  }
  return out;
}

struct ShardEntry {
  int stage = 1;
  std::string dataset;
  TaskTag task = TaskTag::classification;
  std::string path;
};

// Expected shard files in manifest order; only those that exist are returned,
// so the listing is deterministic regardless of directory iteration order.
std::vector<ShardEntry> discover_shards(const RunConfig& config, const CorpusManifest& manifest) {
  std::vector<ShardEntry> out;
  auto add_if_present = [&](ShardEntry entry) {
    if (std::filesystem::exists(entry.path)) out.push_back(std::move(entry));
  };
  for (const auto& info : manifest.datasets)
    for (TaskTag task : info.tasks)
      add_if_present({1, info.name, task,
                      config.paths.shards + "/stage1/" + info.name + "_" +
                          task_tag_name(task) + ".jsonl"});
  add_if_present({2, "fooddialogues", TaskTag::dialogue,
                  config.paths.shards + "/stage2/fooddialogues_dialogue.jsonl"});
  add_if_present({2, "foodreasonseg", TaskTag::reason_seg,
                  config.paths.shards + "/stage2/foodreasonseg_reason_seg.jsonl"});
  return out;
}

bool record_has_name(const FoodRecord& record, const std::string& canon) {
  for (const auto& entry : record.ingredients)
    if (canon_name(entry.name) == canon) return true;
  return false;
}

ordered_json count_map_json(const std::map<int, std::int64_t>& counts) {
  ordered_json out = ordered_json::object();
  for (const auto& [k, v] : counts) out[std::to_string(k)] = v;
  return out;
}

MaskImage threshold_mask(const ag::Tensor& probabilities) {
  MaskImage m;
  m.height = probabilities.rows();
  m.width = probabilities.cols();
  m.values.resize(static_cast<std::size_t>(m.height * m.width));
  for (long i = 0; i < probabilities.numel(); ++i)
    m.values[static_cast<std::size_t>(i)] = probabilities[i] >= 0.5 ? 1 : 0;
  return m;
}

std::string field_key(const TaskToken& token) {
  std::string f = field_name(*token.field);
  return token.kind == TokenKind::nutrition_dish ? "total_" + f : f;
}

}  // namespace

// ---- corpus ------------------------------------------------------------------

MakeCorpusResult cmd_make_corpus(const RunConfig& config) {
  config.validate();
  require_path(config.paths.corpus, "corpus");
  SynthSpec spec;
  spec.root = config.paths.corpus;
  if (spec.root.size() > 5 && spec.root.substr(spec.root.size() - 5) == ".json")
    spec.root = std::filesystem::path(spec.root).parent_path().string();
  spec.image_size = config.model.image_size;
  spec.seed = derive_seed(config.seed, "corpus");

  MakeCorpusResult result;
  result.manifest = make_synth_corpus(spec);
  CorpusManifest manifest = load_manifest(result.manifest);
  result.datasets = static_cast<long>(manifest.datasets.size());
  for (const auto& info : manifest.datasets)
    result.records += static_cast<long>(load_dataset_records(manifest, info).size());
  return result;
}

// ---- stage-1 forge -------------------------------------------------------------

ForgeStage1Result cmd_forge_stage1(const RunConfig& config) {
  config.validate();
  require_path(config.paths.corpus, "corpus");
  require_path(config.paths.shards, "shards");
  CorpusManifest manifest = load_manifest(manifest_path_of(config));
  const auto& bank = forge::TemplateBank::builtin();
  std::string dir = config.paths.shards + "/stage1";
  std::filesystem::create_directories(dir);

  ForgeStage1Result out;
  for (const auto& info : manifest.datasets) {
    auto records = load_dataset_records(manifest, info);
    std::set<std::string> pool;
    for (const auto& r : records)
      for (const auto& entry : r.ingredients) pool.insert(canon_name(entry.name));

    for (TaskTag task : info.tasks) {
      std::vector<Conversation> convs;
      convs.reserve(records.size());
      for (std::size_t j = 0; j < records.size(); ++j) {
        const FoodRecord& r = records[j];
        std::uint64_t seed =
            derive_seed(config.seed, "stage1/" + info.name + "/" + r.record_id + "/" +
                                         task_tag_name(task));
        switch (task) {
          case TaskTag::classification:
            convs.push_back(build_classification(r, bank, seed, &out.stats));
            break;
          case TaskTag::ingredient:
            convs.push_back(build_ingredient(r, bank, seed, &out.stats));
            break;
          case TaskTag::recipe:
            convs.push_back(build_recipe(r, bank, seed, &out.stats));
            break;
          case TaskTag::nutrition:
            convs.push_back(
                build_nutrition(r, static_cast<int>(j % 7) + 1, bank, seed, &out.stats));
            break;
          case TaskTag::segmentation: {
            ReferMixPolicy policy = config.refer_policy;
            policy.masks_complete = info.masks_complete;
            std::vector<std::string> absent;
            for (const auto& name : pool)
              if (!record_has_name(r, name)) absent.push_back(name);
            convs.push_back(build_segmentation(r, policy, absent, bank, seed, &out.stats));
            break;
          }
          default:
            throw ConfigError("dataset " + info.name + " lists a non-stage-1 task " +
                              task_tag_name(task));
        }
      }
      std::string path = dir + "/" + info.name + "_" + task_tag_name(task) + ".jsonl";
      write_conversation_shard(path, convs);
      out.shard_paths.push_back(path);
    }
  }

  ordered_json js = ordered_json::object();
  js["conversations"] = out.stats.conversations;
  js["one_to_zero"] = out.stats.one_to_zero;
  js["hybrid"] = out.stats.hybrid;
  js["segment_all"] = out.stats.segment_all;
  ordered_json usage = ordered_json::object();
  for (const auto& [slot, n] : out.stats.template_usage) usage[slot] = n;
  js["template_usage"] = std::move(usage);
  js["refer_counts"] = count_map_json(out.stats.refer_counts);
  js["absent_counts"] = count_map_json(out.stats.absent_counts);
  out.stats_path = dir + "/forge_stats.json";
  write_file_atomic(out.stats_path, js.dump(2) + "\n");
  return out;
}

// ---- stage-2 forge -------------------------------------------------------------

ForgeStage2Result cmd_forge_stage2(const RunConfig& config) {
  config.validate();
  require_path(config.paths.corpus, "corpus");
  require_path(config.paths.shards, "shards");
  CorpusManifest manifest = load_manifest(manifest_path_of(config));
  Backend backend = config.stage2_gen.use_env_backend ? backend_from_env() : Backend(mock_backend);
  std::string dir = config.paths.shards + "/stage2";
  std::filesystem::create_directories(dir);

  ForgeStage2Result out;
  std::vector<Conversation> dialogues;
  std::vector<Conversation> reasons;
  std::string rejections;
  for (const auto& info : manifest.datasets) {
    auto records = load_dataset_records(manifest, info);
    for (const auto& r : records) {
      for (Stage2Mode mode : {Stage2Mode::dialogue, Stage2Mode::reason_seg}) {
        const char* mode_name = mode == Stage2Mode::dialogue ? "dialogue" : "reason_seg";
        std::uint64_t seed = derive_seed(
            config.seed, std::string("stage2/") + mode_name + "/" + info.name + "/" + r.record_id);
        Stage2Result res = generate_stage2(r, mode, config.dialogue, backend, seed,
                                           config.stage2_gen.max_retries);
        if (res.conversation) {
          (mode == Stage2Mode::dialogue ? dialogues : reasons)
              .push_back(std::move(*res.conversation));
        } else {
          rejections += info.name + "/" + r.record_id + " " + mode_name + ": " +
                        res.rejection + "\n";
          ++out.rejections;
        }
      }
    }
  }
  out.dialogues = static_cast<long>(dialogues.size());
  out.reason_segs = static_cast<long>(reasons.size());
  out.dialogue_shard = dir + "/fooddialogues_dialogue.jsonl";
  out.reasonseg_shard = dir + "/foodreasonseg_reason_seg.jsonl";
  out.rejection_log = dir + "/rejections.log";
  write_conversation_shard(out.dialogue_shard, dialogues);
  write_conversation_shard(out.reasonseg_shard, reasons);
  write_file_atomic(out.rejection_log, rejections);
  return out;
}

// ---- training -------------------------------------------------------------------

TrainResult cmd_train(const RunConfig& config, int stage) {
  config.validate();
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  require_path(config.paths.corpus, "corpus");
  require_path(config.paths.shards, "shards");
  require_path(config.paths.out, "out");
  CorpusManifest manifest = load_manifest(manifest_path_of(config));

  auto entries = discover_shards(config, manifest);
  std::vector<std::vector<Conversation>> loaded;
  loaded.reserve(entries.size());
  for (const auto& e : entries) loaded.push_back(load_conversation_shard(e.path, manifest.root));

  // Vocabulary over every shard present, so stage-1 and stage-2 models agree.
  std::vector<std::string> texts;
  int max_index = 1;
  for (const auto& convs : loaded)
    for (const auto& conv : convs) {
      texts.push_back(flatten_text(conv));
      for (const auto& turn : conv.turns)
        for (const auto& [token, label] : turn.token_labels)
          if (token.index) max_index = std::max(max_index, *token.index);
    }
  if (texts.empty())
    throw DataError("no forged shards under " + config.paths.shards + "; run the forge first");
  Vocabulary vocab = extend_vocabulary(Vocabulary::build(texts), max_index);

  FoodModel model = [&]() -> FoodModel {
    if (stage == 2) {
      std::string resume = config.paths.checkpoint.empty()
                               ? config.paths.out + "/stage1_final.ckpt"
                               : config.paths.checkpoint;
      if (std::filesystem::exists(resume)) {
        FoodModel m = FoodModel::load(resume);
        if (m.vocabulary().tokens() != vocab.tokens())
          throw ConfigError("checkpoint vocabulary does not cover the current shards; "
                            "re-run stage 1 after forging stage 2");
        return m;
      }
    }
    ModelConfig mc = config.model;
    mc.vocab_size = static_cast<long>(vocab.tokens().size());
    FoodModel m(mc, vocab, derive_seed(config.seed, "model"));
    m.apply_lora(mc.lora_rank, mc.lora_alpha, mc.lora_dropout);
    return m;
  }();

  ShardRegistry registry;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (stage == 1 && entries[i].stage != 1) continue;
    registry.add(entries[i].dataset, entries[i].task, std::move(loaded[i]));
  }

  const StagePlan& plan = stage == 1 ? config.stage1 : config.stage2;
  StageResult sr = run_stage(model, plan, registry, config.loss, config.paths.out,
                             manifest.root, derive_seed(config.seed, stage == 1 ? "train1" : "train2"));
  TrainResult out;
  out.checkpoint = sr.final_checkpoint;
  out.log_path = config.paths.out + "/stage" + std::to_string(stage) + "_train.log";
  out.steps = plan.steps;
  return out;
}

// ---- evaluation -------------------------------------------------------------------

AnswerPrediction predict_answer(const FoodModel& model, const PreparedSample& sample,
                                const TurnSpan& span, long max_new_tokens) {
  std::vector<long> prompt(sample.rendered.ids.begin(),
                           sample.rendered.ids.begin() + span.answer_begin);
  std::vector<long> continuation =
      model.generate(sample.visual, prompt, static_cast<int>(max_new_tokens));

  AnswerPrediction out;
  std::vector<long> text_ids = continuation;
  if (!text_ids.empty() && text_ids.back() == Vocabulary::kStopId) text_ids.pop_back();
  out.text = model.vocabulary().decode(text_ids);

  std::vector<long> full = prompt;
  full.insert(full.end(), continuation.begin(), continuation.end());
  std::vector<long> positions;
  for (std::size_t k = 0; k < continuation.size(); ++k) {
    long pos = static_cast<long>(prompt.size() + k);
    if (model.vocabulary().task_token_of(full[static_cast<std::size_t>(pos)]))
      positions.push_back(pos);
  }
  if (!positions.empty()) {
    ModelOutput mo = model.forward(sample.visual, full, positions);
    for (const auto& np : mo.nutrition_predictions) out.values.emplace(np.token, np.value);
    for (const auto& mp : mo.mask_predictions)
      out.masks.emplace(mp.token, threshold_mask(mp.probabilities));
  }
  return out;
}

std::vector<SegEvalSample> seg_responses(const FoodModel& model, const Conversation& conv,
                                         const std::vector<std::string>& name_pool,
                                         const std::string& image_root, long max_new_tokens) {
  PreparedSample sample = prepare_sample(model, conv, image_root);
  ParseContext ref_ctx;
  ref_ctx.referred_names = name_pool;

  std::vector<SegEvalSample> out;
  for (std::size_t i = 0; i < sample.rendered.turn_spans.size(); ++i) {
    const TurnSpan& span = sample.rendered.turn_spans[i];
    if (span.speaker != Speaker::assistant) continue;
    const Turn& turn = conv.turns[i];

    ParsedPrediction ref = parse_prediction(turn.text, TaskTag::segmentation, ref_ctx);
    std::vector<std::string> addressed;
    std::vector<bool> expected_refusal;
    std::vector<std::optional<TaskToken>> expected_token;
    for (const auto& a : ref.assignments) {
      if (!a.refused && !a.token) continue;  // name not part of this answer
      addressed.push_back(a.name);
      expected_refusal.push_back(a.refused);
      expected_token.push_back(a.token);
    }
    if (addressed.empty()) continue;  // not a segmentation-style answer

    AnswerPrediction pred = predict_answer(model, sample, span, max_new_tokens);
    ParseContext pred_ctx;
    pred_ctx.referred_names = addressed;
    ParsedPrediction parsed = parse_prediction(pred.text, TaskTag::segmentation, pred_ctx);

    SegEvalSample s;
    for (std::size_t k = 0; k < addressed.size(); ++k) {
      const SegAssignment& pa = parsed.assignments[k];
      s.refusal_expected.push_back(expected_refusal[k]);
      s.refusal_predicted.push_back(pa.refused);
      if (expected_refusal[k]) continue;
      const MaskImage& truth = std::get<MaskImage>(turn.token_labels.at(*expected_token[k]));
      MaskImage predicted;
      if (pa.token) {
        auto it = pred.masks.find(*pa.token);
        if (it != pred.masks.end()) predicted = it->second;
      }
      if (predicted.values.empty()) {
        predicted.height = truth.height;
        predicted.width = truth.width;
        predicted.values.assign(static_cast<std::size_t>(truth.height * truth.width), 0);
      }
      s.targets.push_back(truth);
      s.predicted.push_back(std::move(predicted));
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

struct FieldAcc {
  double err = 0.0;
  double truth = 0.0;
  long n = 0;
};

long existent_count(const SegEvalSample& s) {
  long n = 0;
  for (bool refused : s.refusal_expected)
    if (!refused) ++n;
  return n;
}

}  // namespace

EvalResult cmd_eval(const RunConfig& config) {
  config.validate();
  require_path(config.paths.corpus, "corpus");
  require_path(config.paths.shards, "shards");
  require_path(config.paths.out, "out");
  std::string checkpoint = config.paths.checkpoint;
  if (checkpoint.empty()) {
    // default to the latest stage's final checkpoint under the run directory
    for (const char* name : {"/stage2_final.ckpt", "/stage1_final.ckpt"}) {
      if (std::filesystem::exists(config.paths.out + name)) {
        checkpoint = config.paths.out + name;
        break;
      }
    }
    if (checkpoint.empty())
      throw ConfigError("paths.checkpoint must be set (no final checkpoint under paths.out)");
  }
  FoodModel model = FoodModel::load(checkpoint);
  CorpusManifest manifest = load_manifest(manifest_path_of(config));

  std::set<std::string> class_set;
  std::set<std::string> name_set;
  for (const auto& info : manifest.datasets) {
    for (const auto& r : load_dataset_records(manifest, info)) {
      if (r.class_label) class_set.insert(*r.class_label);
      for (const auto& entry : r.ingredients) name_set.insert(canon_name(entry.name));
    }
  }
  std::vector<std::string> class_names(class_set.begin(), class_set.end());
  std::vector<std::string> name_pool(name_set.begin(), name_set.end());
  ParseContext cls_ctx;
  cls_ctx.class_names = class_names;

  long cls_hits = 0, cls_n = 0;
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> ingredient_pairs;
  std::vector<std::pair<std::string, std::string>> recipe_pairs;
  std::map<std::string, FieldAcc> nutrition_acc;
  std::map<long, std::vector<SegEvalSample>> seg_buckets;  // existent count >= 1
  std::vector<SegEvalSample> one_to_zero;
  std::vector<SegEvalSample> reason_samples;

  for (const auto& entry : discover_shards(config, manifest)) {
    for (const auto& conv : load_conversation_shard(entry.path, manifest.root)) {
      switch (conv.task_tag) {
        case TaskTag::classification: {
          PreparedSample sample = prepare_sample(model, conv, manifest.root);
          for (std::size_t i = 0; i < sample.rendered.turn_spans.size(); ++i) {
            const TurnSpan& span = sample.rendered.turn_spans[i];
            if (span.speaker != Speaker::assistant) continue;
            ParsedPrediction ref =
                parse_prediction(conv.turns[i].text, TaskTag::classification, cls_ctx);
            if (!ref.parsed)
              throw DataError("reference answer failed to parse in " + conv.source_record);
            AnswerPrediction pred =
                predict_answer(model, sample, span, config.eval.max_new_tokens);
            ParsedPrediction got = parse_prediction(pred.text, TaskTag::classification, cls_ctx);
            ++cls_n;
            if (got.parsed && canon_name(got.class_name) == canon_name(ref.class_name))
              ++cls_hits;
          }
          break;
        }
        case TaskTag::ingredient: {
          PreparedSample sample = prepare_sample(model, conv, manifest.root);
          for (std::size_t i = 0; i < sample.rendered.turn_spans.size(); ++i) {
            const TurnSpan& span = sample.rendered.turn_spans[i];
            if (span.speaker != Speaker::assistant) continue;
            ParsedPrediction ref =
                parse_prediction(conv.turns[i].text, TaskTag::ingredient, {});
            if (!ref.parsed)
              throw DataError("reference answer failed to parse in " + conv.source_record);
            AnswerPrediction pred =
                predict_answer(model, sample, span, config.eval.max_new_tokens);
            ParsedPrediction got = parse_prediction(pred.text, TaskTag::ingredient, {});
            ingredient_pairs.push_back({got.ingredient_names, ref.ingredient_names});
          }
          break;
        }
        case TaskTag::recipe: {
          PreparedSample sample = prepare_sample(model, conv, manifest.root);
          for (std::size_t i = 0; i < sample.rendered.turn_spans.size(); ++i) {
            const TurnSpan& span = sample.rendered.turn_spans[i];
            if (span.speaker != Speaker::assistant) continue;
            AnswerPrediction pred =
                predict_answer(model, sample, span, config.eval.max_new_tokens);
            recipe_pairs.push_back({pred.text, conv.turns[i].text});
          }
          break;
        }
        case TaskTag::nutrition:
        case TaskTag::dialogue: {
          PreparedSample sample = prepare_sample(model, conv, manifest.root);
          for (std::size_t i = 0; i < sample.rendered.turn_spans.size(); ++i) {
            const TurnSpan& span = sample.rendered.turn_spans[i];
            if (span.speaker != Speaker::assistant) continue;
            bool any_value = false;
            for (const auto& [token, label] : conv.turns[i].token_labels)
              if (token.kind != TokenKind::segmentation) any_value = true;
            if (!any_value) continue;
            AnswerPrediction pred =
                predict_answer(model, sample, span, config.eval.max_new_tokens);
            for (const auto& [token, label] : conv.turns[i].token_labels) {
              if (token.kind == TokenKind::segmentation) continue;
              double truth = std::get<double>(label);
              auto it = pred.values.find(token);
              double got = it == pred.values.end() ? 0.0 : std::expm1(it->second);
              FieldAcc& acc = nutrition_acc[field_key(token)];
              acc.err += std::abs(got - truth);
              acc.truth += truth;
              acc.n += 1;
            }
          }
          break;
        }
        case TaskTag::segmentation:
        case TaskTag::reason_seg: {
          auto samples =
              seg_responses(model, conv, name_pool, manifest.root, config.eval.max_new_tokens);
          for (auto& s : samples) {
            if (conv.task_tag == TaskTag::reason_seg) {
              reason_samples.push_back(std::move(s));
            } else if (long k = existent_count(s); k > 0) {
              seg_buckets[k].push_back(std::move(s));
            } else {
              one_to_zero.push_back(std::move(s));
            }
          }
          break;
        }
      }
    }
  }

  MetricReport report;
  for (TokenKind kind : {TokenKind::nutrition_ingredient, TokenKind::nutrition_dish}) {
    for (NutritionField f : kNutritionFields) {
      TaskToken probe = kind == TokenKind::nutrition_dish ? TaskToken::dish(f)
                                                          : TaskToken::ingredient(f, 1);
      auto it = nutrition_acc.find(field_key(probe));
      if (it == nutrition_acc.end() || it->second.n == 0) continue;
      const FieldAcc& acc = it->second;
      MetricReport::NutritionRow row;
      row.field = it->first;
      row.mae = acc.err / static_cast<double>(acc.n);
      row.mae_pct = acc.truth > 0.0 ? acc.err / acc.truth * 100.0 : 0.0;
      row.count = acc.n;
      report.nutrition.push_back(row);
    }
  }
  for (const auto& [k, bucket] : seg_buckets) {
    MetricReport::SegRow row;
    row.refer_k = k;
    row.ciou = ciou(bucket);
    row.acc = response_accuracy(bucket).acc_existent;
    row.queries = static_cast<long>(bucket.size());
    report.segmentation.push_back(row);
  }
  if (!one_to_zero.empty()) {
    report.one_to_zero_acc = response_accuracy(one_to_zero).acc_absent;
    report.one_to_zero_queries = static_cast<long>(one_to_zero.size());
  }
  if (!reason_samples.empty()) {
    MetricReport::ReasonRow row;
    row.giou = giou(reason_samples);
    row.ciou = ciou(reason_samples);
    row.samples = static_cast<long>(reason_samples.size());
    report.reasoning = row;
  }
  if (cls_n > 0 || !ingredient_pairs.empty() || !recipe_pairs.empty()) {
    MetricReport::VqaRow row;
    row.classification_n = cls_n;
    row.top1 = cls_n > 0 ? static_cast<double>(cls_hits) / static_cast<double>(cls_n) : 0.0;
    row.ingredient_n = static_cast<long>(ingredient_pairs.size());
    if (!ingredient_pairs.empty()) {
      SetMetric m = ingredient_set_metrics(ingredient_pairs);
      row.ingredient_iou = m.iou;
      row.ingredient_f1 = m.f1;
    }
    row.recipe_n = static_cast<long>(recipe_pairs.size());
    if (!recipe_pairs.empty()) {
      RecipeMetric m = recipe_metrics(recipe_pairs);
      row.bleu = m.bleu;
      row.rouge_l = m.rouge_l;
    }
    report.vqa = row;
  }

  std::filesystem::create_directories(config.paths.out);
  EvalResult result;
  result.report = report;
  result.json_path = config.paths.out + "/" + config.eval.report_basename + ".json";
  result.text_path = config.paths.out + "/" + config.eval.report_basename + ".txt";
  write_file_atomic(result.json_path, report_to_json(report));
  write_file_atomic(result.text_path, render_report_human(report));
  return result;
}

// ---- report -----------------------------------------------------------------------

std::string cmd_report(const std::string& report_json, const std::string& out_path) {
  MetricReport report = report_from_json(read_file(report_json));
  std::string out = out_path;
  if (out.empty()) {
    out = report_json;
    if (out.size() > 5 && out.substr(out.size() - 5) == ".json") out.resize(out.size() - 5);
    out += ".txt";
  }
  write_file_atomic(out, render_report_human(report));
  return out;
}

}  // namespace umami
