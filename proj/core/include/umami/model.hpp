#pragma once

// The toy multimodal model: a frozen patch encoder stands in for the vision
// tower, a small frozen decoder-only transformer stands in for the LMM, and
// the mechanism under study — task-token taps -> shared projection MLP ->
// ten nutrition regression heads + a prompt-conditioned mask decoder, with
// low-rank adapters on the attention maps — is wired exactly as published.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "umami/autograd.hpp"
#include "umami/datamodel.hpp"
#include "umami/imageio.hpp"
#include "umami/tokenizer.hpp"

namespace umami {

struct ModelConfig {
  long d_model = 256;
  long n_layers = 4;
  long n_heads = 4;
  long vocab_size = 0;  // filled from the vocabulary at construction
  long image_size = 64;
  long patch_size = 8;
  long max_seq_len = 512;
  long ff_mult = 4;
  std::vector<long> proj_dims = {256, 256, 256};  // shared projection MLP
  std::vector<long> head_dims = {256, 1};         // each regression head
  int lora_rank = 8;
  double lora_alpha = 16.0;
  double lora_dropout = 0.05;
  long mask_decode_dim = 64;

  long n_patches() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  void validate() const;  // ConfigError on inconsistent dimensions
};

// ---- parameters ------------------------------------------------------------

struct Param {
  std::string name;
  ag::Tensor value;
  bool trainable = false;
};

class ParamStore {
 public:
  Param& add(const std::string& name, ag::Tensor value, bool trainable);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  void remove_prefix(const std::string& prefix);  // drops e.g. all "lora." params

  // creation order; checkpoints and binding iterate in this order
  const std::vector<std::string>& names() const { return names_; }
  long trainable_count() const;  // total trainable scalars

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, Param> index_;
};

// ---- outputs ---------------------------------------------------------------

struct NutritionPrediction {
  long position = 0;  // text position of the token
  TaskToken token;
  double value = 0.0;  // raw head output (log1p-space target)
};

struct MaskPrediction {
  long position = 0;
  TaskToken token;
  ag::Tensor logits;         // [image, image]
  ag::Tensor probabilities;  // sigmoid(logits), in (0,1)
};

struct ModelOutput {
  ag::Tensor logits;  // [n_patches + n_text, vocab]
  std::map<long, ag::Tensor> task_embeddings;  // text position -> [proj out]
  std::vector<NutritionPrediction> nutrition_predictions;
  std::vector<MaskPrediction> mask_predictions;
  long visual_rows = 0;  // row offset of text position 0 in `logits`
};

// Training-time handles into a live tape. Mask nodes stay in patch layout
// ([n_patches, patch²]); losses are sums over elements, so the layout only has
// to match between prediction and target.
struct GraphNutritionSite {
  long position = 0;
  TaskToken token;
  ag::NodeId value = -1;  // [1,1]
};
struct GraphMaskSite {
  long position = 0;
  TaskToken token;
  ag::NodeId logits = -1;         // [n_patches, patch²]
  ag::NodeId probabilities = -1;  // same shape
};
struct GraphOutput {
  ag::NodeId logits = -1;  // [n_patches + n_text, vocab]
  std::map<long, ag::NodeId> task_embeddings;
  std::vector<GraphNutritionSite> nutrition_sites;
  std::vector<GraphMaskSite> mask_sites;
  long visual_rows = 0;
};

struct ForwardOptions {
  bool training = false;        // enables LoRA dropout
  std::uint64_t dropout_seed = 0;
};

// Parameter nodes on a caller-owned tape: trainable params become leaves,
// frozen ones constants. Shared across every sample graph built on that tape.
struct ParamBinding {
  std::unordered_map<std::string, ag::NodeId> nodes;
  ag::NodeId at(const std::string& name) const;
};

// ---- layout helpers ----------------------------------------------------------

// [H,W] <-> [n_patches, patch²] rearrangements (row-major patches, row-major
// pixels within a patch).
ag::Tensor to_patch_layout(const ag::Tensor& hw, long patch);
ag::Tensor from_patch_layout(const ag::Tensor& patches, long image, long patch);
ag::Tensor mask_to_tensor(const MaskImage& mask);   // [H,W] of 0/1
ag::Tensor image_to_tensor(const RgbImage& image);  // [H,W,3] scaled to [0,1]

// ---- the model -------------------------------------------------------------

class FoodModel {
 public:
  // Fresh deterministic initialization. The vocabulary must already carry the
  // task tokens (extend_vocabulary), because head routing needs them.
  FoodModel(ModelConfig config, Vocabulary vocab, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  bool lora_active() const { return lora_active_; }

  // Frozen patch tower: [image,image,3] -> [n_patches, d_model], before any
  // position information is added (patch-local by construction).
  ag::Tensor encode_image(const ag::Tensor& image) const;

  // Whole-model forward for inference. `positions` lists the text positions
  // holding task tokens; DataError when a position is out of range or does
  // not hold a task token.
  ModelOutput forward(const ag::Tensor& visual, const std::vector<long>& ids,
                      const std::vector<long>& positions) const;

  // Same network, expressed on a caller-owned tape for training.
  ParamBinding bind(ag::Tape& tape) const;
  GraphOutput forward_graph(ag::Tape& tape, const ParamBinding& binding,
                            const ag::Tensor& visual, const std::vector<long>& ids,
                            const std::vector<long>& positions,
                            const ForwardOptions& options) const;

  // Greedy decoding; returns the continuation (stop token included when hit).
  std::vector<long> generate(const ag::Tensor& visual, const std::vector<long>& prompt,
                             int max_new_tokens) const;

  // Low-rank adapters on every attention map (q,k,v,o in every layer).
  // Fresh adapters leave the forward output bit-identical (zero-initialized
  // up-projection); merge folds them into the base weights and removes them.
  void apply_lora(int rank, double alpha, double dropout);
  void merge_lora();

  // versioned single-file archive of config + vocabulary + parameters
  void save(const std::string& path) const;
  static FoodModel load(const std::string& path);

 private:
  FoodModel() = default;  // used by load()
  void init_params(std::uint64_t seed);

  ModelConfig config_;
  Vocabulary vocab_;
  ParamStore params_;
  bool lora_active_ = false;
  long task_rows_ = 0;  // trailing vocabulary rows owned by embed.task
  std::uint64_t seed_ = 0;  // construction seed; adapter init draws from it
};

}  // namespace umami
