#pragma once

// Interchange layer: line-delimited records and conversations, a corpus
// manifest, and shard IO. One JSON object per line, fixed key order, numbers
// in canonical shortest form — equal values always serialize to equal bytes.

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "umami/datamodel.hpp"

namespace umami {

// Masks serialize by file path when one is attached (mask_path), else as an
// inline RLE object {h, w, counts}. Loading materializes pixels either way;
// paths resolve against `root`.
std::string record_to_json(const FoodRecord& record);
FoodRecord record_from_json(const std::string& line, const std::string& root);  // DataError

std::string conversation_to_json(const Conversation& conv);
Conversation conversation_from_json(const std::string& line, const std::string& root);

// One value per line; trailing newline after every line.
void write_record_shard(const std::string& path, const std::vector<FoodRecord>& records);
std::vector<FoodRecord> load_record_shard(const std::string& path, const std::string& root);
void write_conversation_shard(const std::string& path, const std::vector<Conversation>& convs);
std::vector<Conversation> load_conversation_shard(const std::string& path, const std::string& root);

// ---- corpus manifest ---------------------------------------------------------

// Dataset roles drive which forge tasks a dataset feeds and how the sampler
// weights it. masks_complete=false marks partially-annotated corpora whose
// segmentation queries must stay refer-specified.
struct DatasetInfo {
  std::string name;
  std::string records_path;  // relative to the manifest directory
  bool masks_complete = true;
  std::vector<TaskTag> tasks;  // forge tasks this dataset feeds
};

struct CorpusManifest {
  std::string root;  // directory of the manifest file; resolves relative paths
  std::vector<DatasetInfo> datasets;

  const DatasetInfo* find(const std::string& name) const;
};

CorpusManifest load_manifest(const std::string& path);
void write_manifest(const std::string& path, const CorpusManifest& manifest);

// Loads one dataset's records and validates them; DataError names the line
// of the first invalid record.
std::vector<FoodRecord> load_dataset_records(const CorpusManifest& manifest, const DatasetInfo& info);

}  // namespace umami
