#include "umami/corpus.hpp"

#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <set>

#include "umami/imageio.hpp"

namespace umami {

using json = nlohmann::ordered_json;  // we sort keys by construction order below

namespace {

// Doubles pass through format_double so JSON bytes match every other render
// of the same value.
json num(double v) {
  if (v == static_cast<double>(static_cast<long long>(v)) && std::abs(v) < 1e15)
    return json(static_cast<long long>(v));
  return json(v);
}

json facts_to_json(const NutritionFacts& f) {
  json j;
  j["mass"] = num(f.mass);
  j["calories"] = num(f.calories);
  j["fat"] = num(f.fat);
  j["carbohydrate"] = num(f.carbohydrate);
  j["protein"] = num(f.protein);
  return j;
}

NutritionFacts facts_from_json(const json& j) {
  NutritionFacts f;
  f.mass = j.at("mass").get<double>();
  f.calories = j.at("calories").get<double>();
  f.fat = j.at("fat").get<double>();
  f.carbohydrate = j.at("carbohydrate").get<double>();
  f.protein = j.at("protein").get<double>();
  return f;
}

json mask_to_json(const MaskImage& m) {
  json j;
  j["h"] = m.height;
  j["w"] = m.width;
  j["counts"] = rle_encode(m);
  return j;
}

MaskImage mask_from_json(const json& j, const std::string& root) {
  if (j.is_string()) {
    std::filesystem::path p = std::filesystem::path(root) / j.get<std::string>();
    return read_mask_pgm(p.string());
  }
  return rle_decode(j.at("h").get<long>(), j.at("w").get<long>(),
                    j.at("counts").get<std::vector<long>>());
}

json handle_to_json(const ImageHandle& h) {
  json j;
  j["role"] = h.role == ImageHandle::Role::overhead ? "overhead" : "frame";
  j["path"] = h.path;
  if (h.width > 0) j["w"] = h.width;
  if (h.height > 0) j["h"] = h.height;
  return j;
}

ImageHandle handle_from_json(const json& j) {
  ImageHandle h;
  std::string role = j.at("role").get<std::string>();
  if (role == "overhead") h.role = ImageHandle::Role::overhead;
  else if (role == "frame") h.role = ImageHandle::Role::frame;
  else throw DataError("unknown image role: " + role);
  h.path = j.at("path").get<std::string>();
  if (j.contains("w")) h.width = j.at("w").get<long>();
  if (j.contains("h")) h.height = j.at("h").get<long>();
  return h;
}

json parse_line(const std::string& line, const char* what) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError(std::string("malformed ") + what + " line");
  return j;
}

}  // namespace

std::string record_to_json(const FoodRecord& r) {
  json j;
  j["record_id"] = r.record_id;
  j["split"] = r.split == Split::train ? "train" : "test";
  json images = json::array();
  for (const auto& h : r.images) images.push_back(handle_to_json(h));
  j["images"] = images;
  if (r.class_label) j["class_label"] = *r.class_label;
  json ings = json::array();
  for (const auto& ing : r.ingredients) {
    json ji;
    ji["name"] = ing.name;
    if (ing.facts) ji["facts"] = facts_to_json(*ing.facts);
    if (ing.mask_path) ji["mask"] = *ing.mask_path;
    else if (ing.mask) ji["mask"] = mask_to_json(*ing.mask);
    ings.push_back(ji);
  }
  j["ingredients"] = ings;
  if (r.recipe) j["recipe"] = *r.recipe;
  if (r.total) j["total"] = facts_to_json(*r.total);
  return j.dump();
}

FoodRecord record_from_json(const std::string& line, const std::string& root) {
  json j = parse_line(line, "record");
  FoodRecord r;
  try {
    r.record_id = j.at("record_id").get<std::string>();
    std::string split = j.at("split").get<std::string>();
    if (split == "train") r.split = Split::train;
    else if (split == "test") r.split = Split::test;
    else throw DataError("unknown split: " + split);
    for (const auto& jh : j.at("images")) r.images.push_back(handle_from_json(jh));
    if (j.contains("class_label")) r.class_label = j.at("class_label").get<std::string>();
    if (j.contains("ingredients"))
      for (const auto& ji : j.at("ingredients")) {
        IngredientEntry ing;
        ing.name = ji.at("name").get<std::string>();
        if (ji.contains("facts")) ing.facts = facts_from_json(ji.at("facts"));
        if (ji.contains("mask")) {
          if (ji.at("mask").is_string()) ing.mask_path = ji.at("mask").get<std::string>();
          ing.mask = mask_from_json(ji.at("mask"), root);
        }
        r.ingredients.push_back(std::move(ing));
      }
    if (j.contains("recipe")) r.recipe = j.at("recipe").get<std::string>();
    if (j.contains("total")) r.total = facts_from_json(j.at("total"));
  } catch (const json::exception& e) {
    throw DataError(std::string("record field error: ") + e.what());
  }
  return r;
}

namespace {

const char* speaker_name(Speaker s) {
  switch (s) {
    case Speaker::system: return "system";
    case Speaker::user: return "user";
    case Speaker::assistant: return "assistant";
  }
  return "?";
}

Speaker speaker_from_name(const std::string& s) {
  if (s == "system") return Speaker::system;
  if (s == "user") return Speaker::user;
  if (s == "assistant") return Speaker::assistant;
  throw DataError("unknown speaker: " + s);
}

}  // namespace

std::string conversation_to_json(const Conversation& conv) {
  json j;
  j["task_tag"] = task_tag_name(conv.task_tag);
  j["source_record"] = conv.source_record;
  json turns = json::array();
  for (const auto& t : conv.turns) {
    json jt;
    jt["speaker"] = speaker_name(t.speaker);
    jt["text"] = t.text;
    if (!t.images.empty()) {
      json imgs = json::array();
      for (const auto& h : t.images) imgs.push_back(handle_to_json(h));
      jt["images"] = imgs;
    }
    if (!t.token_labels.empty()) {
      json labels;  // keyed by token name; map order is TaskToken's, stable
      for (const auto& [token, label] : t.token_labels) {
        if (std::holds_alternative<double>(label)) labels[token_name(token)] = num(std::get<double>(label));
        else labels[token_name(token)] = mask_to_json(std::get<MaskImage>(label));
      }
      jt["token_labels"] = labels;
    }
    turns.push_back(jt);
  }
  j["turns"] = turns;
  return j.dump();
}

Conversation conversation_from_json(const std::string& line, const std::string& root) {
  json j = parse_line(line, "conversation");
  Conversation conv;
  try {
    auto tag = task_tag_from_name(j.at("task_tag").get<std::string>());
    if (!tag) throw DataError("unknown task_tag");
    conv.task_tag = *tag;
    conv.source_record = j.at("source_record").get<std::string>();
    for (const auto& jt : j.at("turns")) {
      Turn t;
      t.speaker = speaker_from_name(jt.at("speaker").get<std::string>());
      t.text = jt.at("text").get<std::string>();
      if (jt.contains("images"))
        for (const auto& jh : jt.at("images")) t.images.push_back(handle_from_json(jh));
      if (jt.contains("token_labels"))
        for (auto it = jt.at("token_labels").begin(); it != jt.at("token_labels").end(); ++it) {
          auto token = parse_token_name(it.key());
          if (!token) throw DataError("unknown token label key: " + it.key());
          if (it.value().is_object()) t.token_labels[*token] = mask_from_json(it.value(), root);
          else if (it.value().is_string()) t.token_labels[*token] = mask_from_json(it.value(), root);
          else t.token_labels[*token] = it.value().get<double>();
        }
      conv.turns.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("conversation field error: ") + e.what());
  }
  return conv;
}

namespace {

template <typename T, typename Fn>
void write_shard(const std::string& path, const std::vector<T>& items, Fn to_json_line) {
  std::string bytes;
  for (const auto& item : items) {
    bytes += to_json_line(item);
    bytes += '\n';
  }
  write_file_atomic(path, bytes);
}

template <typename T, typename Fn>
std::vector<T> load_shard(const std::string& path, Fn from_json_line) {
  std::vector<T> items;
  std::string bytes = read_file(path);
  std::size_t line_no = 0;
  for (const std::string& line : split_lines(bytes)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      items.push_back(from_json_line(line));
    } catch (const DataError& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return items;
}

}  // namespace

void write_record_shard(const std::string& path, const std::vector<FoodRecord>& records) {
  write_shard(path, records, record_to_json);
}

std::vector<FoodRecord> load_record_shard(const std::string& path, const std::string& root) {
  return load_shard<FoodRecord>(path, [&](const std::string& l) { return record_from_json(l, root); });
}

void write_conversation_shard(const std::string& path, const std::vector<Conversation>& convs) {
  write_shard(path, convs, conversation_to_json);
}

std::vector<Conversation> load_conversation_shard(const std::string& path, const std::string& root) {
  return load_shard<Conversation>(path, [&](const std::string& l) { return conversation_from_json(l, root); });
}

// ---- manifest ----------------------------------------------------------------

const DatasetInfo* CorpusManifest::find(const std::string& name) const {
  for (const auto& d : datasets)
    if (d.name == name) return &d;
  return nullptr;
}

CorpusManifest load_manifest(const std::string& path) {
  json j = json::parse(read_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw DataError("malformed manifest: " + path);
  CorpusManifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  try {
    for (const auto& jd : j.at("datasets")) {
      DatasetInfo d;
      d.name = jd.at("name").get<std::string>();
      d.records_path = jd.at("records").get<std::string>();
      if (jd.contains("masks_complete")) d.masks_complete = jd.at("masks_complete").get<bool>();
      for (const auto& jt : jd.at("tasks")) {
        auto tag = task_tag_from_name(jt.get<std::string>());
        if (!tag) throw DataError("manifest: unknown task " + jt.get<std::string>());
        d.tasks.push_back(*tag);
      }
      m.datasets.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest field error: ") + e.what());
  }
  return m;
}

void write_manifest(const std::string& path, const CorpusManifest& manifest) {
  json j;
  json ds = json::array();
  for (const auto& d : manifest.datasets) {
    json jd;
    jd["name"] = d.name;
    jd["records"] = d.records_path;
    jd["masks_complete"] = d.masks_complete;
    json tasks = json::array();
    for (TaskTag t : d.tasks) tasks.push_back(task_tag_name(t));
    jd["tasks"] = tasks;
    ds.push_back(jd);
  }
  j["datasets"] = ds;
  write_file_atomic(path, j.dump(2) + "\n");
}

std::vector<FoodRecord> load_dataset_records(const CorpusManifest& manifest, const DatasetInfo& info) {
  std::filesystem::path p = std::filesystem::path(manifest.root) / info.records_path;
  auto records = load_record_shard(p.string(), manifest.root);
  std::set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto report = validate_record(records[i]);
    if (!report.empty())
      throw DataError(p.string() + ": record " + std::to_string(i + 1) + " (" + records[i].record_id +
                      ") violates \"" + report[0].rule + "\" at " + report[0].field);
    if (!ids.insert(records[i].record_id).second)
      throw DataError(p.string() + ": duplicate record_id " + records[i].record_id);
  }
  return records;
}

}  // namespace umami
