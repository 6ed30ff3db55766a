#include "umami/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <Eigen/Dense>

#include <json.hpp>

#include "umami/common.hpp"

namespace umami {

using ag::NodeId;
using ag::Tape;
using ag::Tensor;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void ModelConfig::validate() const {
  auto bad = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (d_model < 1) bad("d_model must be positive");
  if (n_layers < 1) bad("n_layers must be positive");
  if (n_heads < 1) bad("n_heads must be positive");
  if (d_model % n_heads != 0) bad("d_model must be divisible by n_heads");
  if (image_size < 1 || patch_size < 1) bad("image_size and patch_size must be positive");
  if (image_size % patch_size != 0) bad("image_size must be divisible by patch_size");
  if (ff_mult < 1) bad("ff_mult must be positive");
  if (max_seq_len <= n_patches()) bad("max_seq_len must exceed the visual prefix");
  if (proj_dims.empty()) bad("proj_dims must not be empty");
  for (long d : proj_dims)
    if (d < 1) bad("proj_dims entries must be positive");
  if (head_dims.empty()) bad("head_dims must not be empty");
  for (long d : head_dims)
    if (d < 1) bad("head_dims entries must be positive");
  if (head_dims.back() != 1) bad("regression heads must end in one output");
  if (lora_rank < 1) bad("lora_rank must be >= 1");
  if (lora_rank > d_model) bad("lora_rank must not exceed d_model");
  if (!(lora_alpha > 0.0)) bad("lora_alpha must be positive");
  if (lora_dropout < 0.0 || lora_dropout >= 1.0) bad("lora_dropout must lie in [0,1)");
  if (mask_decode_dim < 1) bad("mask_decode_dim must be positive");
}

// ---- ParamStore ------------------------------------------------------------

Param& ParamStore::add(const std::string& name, Tensor value, bool trainable) {
  if (index_.count(name)) throw ConfigError("duplicate parameter " + name);
  names_.push_back(name);
  auto [it, inserted] = index_.emplace(name, Param{name, std::move(value), trainable});
  return it->second;
}

Param& ParamStore::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return it->second;
}

void ParamStore::remove_prefix(const std::string& prefix) {
  std::vector<std::string> kept;
  for (const auto& name : names_) {
    if (starts_with(name, prefix)) {
      index_.erase(name);
    } else {
      kept.push_back(name);
    }
  }
  names_ = std::move(kept);
}

long ParamStore::trainable_count() const {
  long total = 0;
  for (const auto& name : names_) {
    const auto& p = index_.at(name);
    if (p.trainable) total += p.value.numel();
  }
  return total;
}

// ---- layout helpers ----------------------------------------------------------

Tensor to_patch_layout(const Tensor& hw, long patch) {
  long image = hw.rows();
  if (image == 0 || hw.cols() != image || image % patch != 0)
    throw DataError("patch layout requires a square image divisible by the patch size");
  long grid = image / patch;
  Tensor out({grid * grid, patch * patch});
  for (long r = 0; r < image; ++r)
    for (long c = 0; c < image; ++c) {
      long p = (r / patch) * grid + c / patch;
      long q = (r % patch) * patch + c % patch;
      out.at(p, q) = hw.at(r, c);
    }
  return out;
}

Tensor from_patch_layout(const Tensor& patches, long image, long patch) {
  long grid = image / patch;
  if (patches.rows() != grid * grid || patches.cols() != patch * patch)
    throw DataError("patch tensor does not match the requested image size");
  Tensor out({image, image});
  for (long p = 0; p < patches.rows(); ++p)
    for (long q = 0; q < patches.cols(); ++q) {
      long r = (p / grid) * patch + q / patch;
      long c = (p % grid) * patch + q % patch;
      out.at(r, c) = patches.at(p, q);
    }
  return out;
}

Tensor mask_to_tensor(const MaskImage& mask) {
  Tensor out({mask.height, mask.width});
  for (long i = 0; i < mask.height * mask.width; ++i)
    out[i] = static_cast<double>(mask.values[static_cast<std::size_t>(i)]);
  return out;
}

Tensor image_to_tensor(const RgbImage& image) {
  Tensor out({image.height, image.width, 3});
  for (std::size_t i = 0; i < image.values.size(); ++i)
    out[static_cast<long>(i)] = static_cast<double>(image.values[i]) / 255.0;
  return out;
}

// ---- construction ------------------------------------------------------------

namespace {

constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;
const char* kAttnMaps[4] = {"q", "k", "v", "o"};

std::string block_name(long layer, const std::string& tail) {
  return "blocks." + std::to_string(layer) + "." + tail;
}

std::string head_name(const TaskToken& token) {
  const char* level = token.kind == TokenKind::nutrition_dish ? "dish" : "ing";
  return std::string("heads.") + level + "_" + field_name(*token.field);
}

}  // namespace

FoodModel::FoodModel(ModelConfig config, Vocabulary vocab, std::uint64_t seed)
    : config_(std::move(config)), vocab_(std::move(vocab)) {
  if (vocab_.max_indices() < 1)
    throw ConfigError("vocabulary lacks task tokens; run extend_vocabulary first");
  task_rows_ = 5 + 6L * vocab_.max_indices();
  if (vocab_.size() <= task_rows_ + 2) throw ConfigError("vocabulary too small for the model");
  if (config_.vocab_size != 0 && config_.vocab_size != vocab_.size())
    throw ConfigError("config vocab_size disagrees with the vocabulary");
  config_.vocab_size = vocab_.size();
  config_.validate();
  seed_ = seed;
  init_params(seed);
}

void FoodModel::init_params(std::uint64_t seed) {
  const auto& c = config_;
  auto weight = [&](const std::string& name, std::vector<long> shape, bool trainable) {
    auto rng = make_rng(derive_seed(seed, name));
    params_.add(name, Tensor::trunc_normal(std::move(shape), rng, kInitStd), trainable);
  };
  auto zeros = [&](const std::string& name, std::vector<long> shape, bool trainable) {
    params_.add(name, Tensor::zeros(std::move(shape)), trainable);
  };
  auto ones = [&](const std::string& name, std::vector<long> shape, bool trainable) {
    params_.add(name, Tensor::full(std::move(shape), 1.0), trainable);
  };

  long d = c.d_model;
  weight("embed.base", {c.vocab_size - task_rows_, d}, false);
  weight("embed.task", {task_rows_, d}, true);
  weight("pos", {c.max_seq_len, d}, false);
  weight("vision.patch", {d, c.patch_size * c.patch_size * 3}, false);
  zeros("vision.bias", {d}, false);

  long ff = c.ff_mult * d;
  for (long i = 0; i < c.n_layers; ++i) {
    ones(block_name(i, "ln1.gain"), {d}, false);
    zeros(block_name(i, "ln1.bias"), {d}, false);
    for (const char* m : kAttnMaps) weight(block_name(i, std::string("attn.") + m), {d, d}, false);
    ones(block_name(i, "ln2.gain"), {d}, false);
    zeros(block_name(i, "ln2.bias"), {d}, false);
    weight(block_name(i, "ff.w1"), {ff, d}, false);
    zeros(block_name(i, "ff.b1"), {ff}, false);
    weight(block_name(i, "ff.w2"), {d, ff}, false);
    zeros(block_name(i, "ff.b2"), {d}, false);
  }
  ones("final_ln.gain", {d}, false);
  zeros("final_ln.bias", {d}, false);

  long prev = d;
  for (std::size_t j = 0; j < c.proj_dims.size(); ++j) {
    weight("proj.w" + std::to_string(j), {c.proj_dims[j], prev}, true);
    zeros("proj.b" + std::to_string(j), {c.proj_dims[j]}, true);
    prev = c.proj_dims[j];
  }
  long proj_out = prev;

  for (const char* level : {"dish", "ing"}) {
    for (auto field : kNutritionFields) {
      std::string base = std::string("heads.") + level + "_" + field_name(field);
      long in = proj_out;
      for (std::size_t j = 0; j < c.head_dims.size(); ++j) {
        weight(base + ".w" + std::to_string(j), {c.head_dims[j], in}, true);
        zeros(base + ".b" + std::to_string(j), {c.head_dims[j]}, true);
        in = c.head_dims[j];
      }
    }
  }

  long m = c.mask_decode_dim;
  weight("maskdec.wq", {m, proj_out}, true);
  zeros("maskdec.bq", {m}, true);
  weight("maskdec.wk", {m, d}, true);
  zeros("maskdec.bk", {m}, true);
  weight("maskdec.wv", {m, d}, true);
  zeros("maskdec.bv", {m}, true);
  weight("maskdec.wf", {m, d}, true);
  zeros("maskdec.bf", {m}, true);
  for (int r = 0; r < 2; ++r) {
    std::string base = "maskdec." + std::to_string(r) + ".ff.";
    weight(base + "w1", {m, m}, true);
    zeros(base + "b1", {m}, true);
    weight(base + "w2", {m, m}, true);
    zeros(base + "b2", {m}, true);
  }
  weight("maskdec.px.w1", {m, 2 * m}, true);
  zeros("maskdec.px.b1", {m}, true);
  weight("maskdec.px.w2", {c.patch_size * c.patch_size, m}, true);
  zeros("maskdec.px.b2", {c.patch_size * c.patch_size}, true);
}

// ---- vision ------------------------------------------------------------------

Tensor FoodModel::encode_image(const Tensor& image) const {
  const auto& c = config_;
  if (image.shape != std::vector<long>{c.image_size, c.image_size, 3})
    throw DataError("encode_image expects a [" + std::to_string(c.image_size) + "," +
                    std::to_string(c.image_size) + ",3] image");
  long grid = c.image_size / c.patch_size;
  long n = c.n_patches();
  long pp = c.patch_size * c.patch_size * 3;
  Tensor patches({n, pp});
  for (long r = 0; r < c.image_size; ++r)
    for (long col = 0; col < c.image_size; ++col) {
      long p = (r / c.patch_size) * grid + col / c.patch_size;
      long q = ((r % c.patch_size) * c.patch_size + col % c.patch_size) * 3;
      for (long ch = 0; ch < 3; ++ch)
        patches.at(p, q + ch) = image.data[static_cast<std::size_t>((r * c.image_size + col) * 3 + ch)];
    }

  const Tensor& w = params_.at("vision.patch").value;
  const Tensor& b = params_.at("vision.bias").value;
  Tensor out({n, c.d_model});
  Eigen::Map<MatrixRM> y(out.data.data(), n, c.d_model);
  Eigen::Map<const MatrixRM> xp(patches.data.data(), n, pp);
  Eigen::Map<const MatrixRM> wm(w.data.data(), c.d_model, pp);
  y.noalias() = xp * wm.transpose();
  Eigen::Map<const Eigen::VectorXd> bv(b.data.data(), c.d_model);
  y.rowwise() += bv.transpose();
  return out;
}

// ---- forward -----------------------------------------------------------------

ParamBinding FoodModel::bind(Tape& tape) const {
  ParamBinding binding;
  for (const auto& name : params_.names()) {
    const Param& p = params_.at(name);
    binding.nodes[name] = p.trainable ? tape.leaf(p.value) : tape.constant(p.value);
  }
  return binding;
}

NodeId ParamBinding::at(const std::string& name) const {
  auto it = nodes.find(name);
  if (it == nodes.end()) throw ConfigError("parameter " + name + " is not bound");
  return it->second;
}

namespace {

// y = x * W^T + b
NodeId linear(Tape& t, NodeId x, const ParamBinding& b, const std::string& w,
              const std::string& bias) {
  return ag::add_bias(t, ag::matmul_nt(t, x, b.at(w)), b.at(bias));
}

Tensor causal_mask(long T) {
  Tensor m({T, T});
  for (long r = 0; r < T; ++r)
    for (long c = r + 1; c < T; ++c) m.at(r, c) = -1e30;
  return m;
}

Tensor dropout_mask(std::vector<long> shape, double drop, std::uint64_t seed) {
  auto rng = make_rng(seed);
  Tensor m(std::move(shape));
  double keep = 1.0 - drop;
  for (auto& v : m.data) v = next_unit(rng) < keep ? 1.0 / keep : 0.0;
  return m;
}

}  // namespace

GraphOutput FoodModel::forward_graph(Tape& tape, const ParamBinding& binding, const Tensor& visual,
                                     const std::vector<long>& ids,
                                     const std::vector<long>& positions,
                                     const ForwardOptions& options) const {
  const auto& c = config_;
  long n_text = static_cast<long>(ids.size());
  if (n_text == 0) throw DataError("token sequence is empty");
  long n_patches = c.n_patches();
  long T = n_patches + n_text;
  if (T > c.max_seq_len)
    throw DataError("sequence length " + std::to_string(T) + " exceeds max_seq_len " +
                    std::to_string(c.max_seq_len));
  if (visual.shape != std::vector<long>{n_patches, c.d_model})
    throw DataError("visual embeddings must be [n_patches, d_model]");
  for (long id : ids)
    if (id < 0 || id >= vocab_.size()) throw DataError("token id out of range");

  std::vector<std::pair<long, TaskToken>> sites;
  for (long p : positions) {
    if (p < 0 || p >= n_text)
      throw DataError("task-token position " + std::to_string(p) + " out of range");
    auto token = vocab_.task_token_of(ids[p]);
    if (!token)
      throw DataError("position " + std::to_string(p) + " does not hold a task token");
    sites.emplace_back(p, *token);
  }

  NodeId embed_full =
      ag::concat_rows(tape, {binding.at("embed.base"), binding.at("embed.task")});
  NodeId text = ag::gather_rows(tape, embed_full, ids);
  NodeId x = ag::concat_rows(tape, {tape.constant(visual), text});

  std::vector<long> rows(static_cast<std::size_t>(T));
  std::iota(rows.begin(), rows.end(), 0L);
  x = ag::add(tape, x, ag::gather_rows(tape, binding.at("pos"), rows));

  NodeId mask = tape.constant(causal_mask(T));
  long hd = c.d_model / c.n_heads;
  double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));
  double lora_scale = config_.lora_alpha / static_cast<double>(config_.lora_rank);

  auto attn_map = [&](NodeId input, long layer, const char* map) {
    NodeId y = ag::matmul_nt(tape, input, binding.at(block_name(layer, std::string("attn.") + map)));
    if (!lora_active_) return y;
    std::string lora = "lora." + std::to_string(layer) + "." + map;
    NodeId down_in = input;
    if (options.training && config_.lora_dropout > 0.0) {
      Tensor dm = dropout_mask(tape.val(input).shape, config_.lora_dropout,
                               derive_seed(options.dropout_seed, lora));
      down_in = ag::mul(tape, input, tape.constant(dm));
    }
    NodeId down = ag::matmul_nt(tape, down_in, binding.at(lora + ".a"));
    NodeId up = ag::matmul_nt(tape, down, binding.at(lora + ".b"));
    return ag::add(tape, y, ag::scale(tape, up, lora_scale));
  };

  for (long i = 0; i < c.n_layers; ++i) {
    NodeId ln1 = ag::layer_norm(tape, x, binding.at(block_name(i, "ln1.gain")),
                                binding.at(block_name(i, "ln1.bias")), kLnEps);
    NodeId q = attn_map(ln1, i, "q");
    NodeId k = attn_map(ln1, i, "k");
    NodeId v = attn_map(ln1, i, "v");
    std::vector<NodeId> ctx;
    for (long h = 0; h < c.n_heads; ++h) {
      NodeId qh = ag::slice_cols(tape, q, h * hd, (h + 1) * hd);
      NodeId kh = ag::slice_cols(tape, k, h * hd, (h + 1) * hd);
      NodeId vh = ag::slice_cols(tape, v, h * hd, (h + 1) * hd);
      NodeId scores = ag::scale(tape, ag::matmul_nt(tape, qh, kh), inv_sqrt_hd);
      NodeId weights = ag::softmax_rows(tape, ag::add(tape, scores, mask));
      ctx.push_back(ag::matmul(tape, weights, vh));
    }
    NodeId attn_out = attn_map(ag::concat_cols(tape, ctx), i, "o");
    x = ag::add(tape, x, attn_out);

    NodeId ln2 = ag::layer_norm(tape, x, binding.at(block_name(i, "ln2.gain")),
                                binding.at(block_name(i, "ln2.bias")), kLnEps);
    NodeId f1 = ag::gelu(tape, linear(tape, ln2, binding, block_name(i, "ff.w1"),
                                      block_name(i, "ff.b1")));
    NodeId f2 = linear(tape, f1, binding, block_name(i, "ff.w2"), block_name(i, "ff.b2"));
    x = ag::add(tape, x, f2);
  }

  NodeId h = ag::layer_norm(tape, x, binding.at("final_ln.gain"), binding.at("final_ln.bias"),
                            kLnEps);

  GraphOutput out;
  out.visual_rows = n_patches;
  out.logits = ag::matmul_nt(tape, h, embed_full);
  if (sites.empty()) return out;

  std::vector<long> combined;
  combined.reserve(sites.size());
  for (const auto& [p, token] : sites) combined.push_back(n_patches + p);
  NodeId z = ag::gather_rows(tape, h, combined);
  for (std::size_t j = 0; j < c.proj_dims.size(); ++j) {
    z = linear(tape, z, binding, "proj.w" + std::to_string(j), "proj.b" + std::to_string(j));
    if (j + 1 < c.proj_dims.size()) z = ag::gelu(tape, z);
  }

  // mask-decoder inputs shared by every seg site of this sample
  NodeId hv = -1, K = -1, V = -1, F = -1;
  bool any_seg = std::any_of(sites.begin(), sites.end(), [](const auto& s) {
    return s.second.kind == TokenKind::segmentation;
  });
  if (any_seg) {
    std::vector<long> vrows(static_cast<std::size_t>(n_patches));
    std::iota(vrows.begin(), vrows.end(), 0L);
    hv = ag::gather_rows(tape, h, vrows);
    K = linear(tape, hv, binding, "maskdec.wk", "maskdec.bk");
    V = linear(tape, hv, binding, "maskdec.wv", "maskdec.bv");
    F = linear(tape, hv, binding, "maskdec.wf", "maskdec.bf");
  }
  double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(c.mask_decode_dim));

  for (std::size_t s = 0; s < sites.size(); ++s) {
    const auto& [p, token] = sites[s];
    NodeId e = ag::gather_rows(tape, z, {static_cast<long>(s)});
    out.task_embeddings[p] = e;
    if (token.kind == TokenKind::segmentation) {
      NodeId qv = linear(tape, e, binding, "maskdec.wq", "maskdec.bq");
      for (int r = 0; r < 2; ++r) {
        NodeId scores = ag::scale(tape, ag::matmul_nt(tape, qv, K), inv_sqrt_m);
        NodeId weights = ag::softmax_rows(tape, scores);
        qv = ag::add(tape, qv, ag::matmul(tape, weights, V));
        std::string base = "maskdec." + std::to_string(r) + ".ff.";
        NodeId f1 = ag::gelu(tape, linear(tape, qv, binding, base + "w1", base + "b1"));
        qv = ag::add(tape, qv, linear(tape, f1, binding, base + "w2", base + "b2"));
      }
      NodeId qb = ag::gather_rows(tape, qv, std::vector<long>(static_cast<std::size_t>(n_patches), 0L));
      NodeId cat = ag::concat_cols(tape, {F, qb});
      NodeId p1 = ag::gelu(tape, linear(tape, cat, binding, "maskdec.px.w1", "maskdec.px.b1"));
      NodeId plogits = linear(tape, p1, binding, "maskdec.px.w2", "maskdec.px.b2");
      out.mask_sites.push_back({p, token, plogits, ag::sigmoid(tape, plogits)});
    } else {
      std::string base = head_name(token);
      NodeId y = e;
      for (std::size_t j = 0; j < c.head_dims.size(); ++j) {
        y = linear(tape, y, binding, base + ".w" + std::to_string(j),
                   base + ".b" + std::to_string(j));
        if (j + 1 < c.head_dims.size()) y = ag::gelu(tape, y);
      }
      out.nutrition_sites.push_back({p, token, y});
    }
  }
  return out;
}

ModelOutput FoodModel::forward(const Tensor& visual, const std::vector<long>& ids,
                               const std::vector<long>& positions) const {
  Tape tape;
  ParamBinding binding = bind(tape);
  GraphOutput g = forward_graph(tape, binding, visual, ids, positions, {});
  ModelOutput out;
  out.logits = tape.val(g.logits);
  out.visual_rows = g.visual_rows;
  for (const auto& [pos, node] : g.task_embeddings) out.task_embeddings[pos] = tape.val(node);
  for (const auto& site : g.nutrition_sites)
    out.nutrition_predictions.push_back({site.position, site.token, tape.val(site.value)[0]});
  for (const auto& site : g.mask_sites) {
    MaskPrediction mp;
    mp.position = site.position;
    mp.token = site.token;
    mp.logits = from_patch_layout(tape.val(site.logits), config_.image_size, config_.patch_size);
    mp.probabilities =
        from_patch_layout(tape.val(site.probabilities), config_.image_size, config_.patch_size);
    out.mask_predictions.push_back(std::move(mp));
  }
  return out;
}

std::vector<long> FoodModel::generate(const Tensor& visual, const std::vector<long>& prompt,
                                      int max_new_tokens) const {
  if (prompt.empty()) throw DataError("generate requires a non-empty prompt");
  std::vector<long> ids = prompt;
  std::vector<long> continuation;
  for (int step = 0; step < max_new_tokens; ++step) {
    ModelOutput out = forward(visual, ids, {});
    long row = out.visual_rows + static_cast<long>(ids.size()) - 1;
    long best = 0;
    double best_v = out.logits.at(row, 0);
    for (long v = 1; v < vocab_.size(); ++v) {
      double lv = out.logits.at(row, v);
      if (lv > best_v) {
        best_v = lv;
        best = v;
      }
    }
    continuation.push_back(best);
    ids.push_back(best);
    if (best == Vocabulary::kStopId) break;
  }
  return continuation;
}

// ---- LoRA --------------------------------------------------------------------

void FoodModel::apply_lora(int rank, double alpha, double dropout) {
  if (lora_active_) throw ConfigError("adapters are already applied");
  if (rank < 1) throw ConfigError("lora rank must be >= 1");
  if (rank > config_.d_model) throw ConfigError("lora rank must not exceed d_model");
  if (!(alpha > 0.0)) throw ConfigError("lora alpha must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("lora dropout must lie in [0,1)");
  config_.lora_rank = rank;
  config_.lora_alpha = alpha;
  config_.lora_dropout = dropout;
  for (long i = 0; i < config_.n_layers; ++i) {
    for (const char* m : kAttnMaps) {
      std::string base = "lora." + std::to_string(i) + "." + m;
      auto rng = make_rng(derive_seed(seed_, base));
      params_.add(base + ".a", Tensor::gaussian({rank, config_.d_model}, rng, kInitStd), true);
      params_.add(base + ".b", Tensor::zeros({config_.d_model, rank}), true);
    }
  }
  lora_active_ = true;
}

void FoodModel::merge_lora() {
  if (!lora_active_) throw ConfigError("no adapters to merge");
  double scale = config_.lora_alpha / static_cast<double>(config_.lora_rank);
  long d = config_.d_model;
  long r = config_.lora_rank;
  for (long i = 0; i < config_.n_layers; ++i) {
    for (const char* m : kAttnMaps) {
      std::string base = "lora." + std::to_string(i) + "." + m;
      Tensor& w = params_.at(block_name(i, std::string("attn.") + m)).value;
      const Tensor& a = params_.at(base + ".a").value;
      const Tensor& b = params_.at(base + ".b").value;
      Eigen::Map<MatrixRM> wm(w.data.data(), d, d);
      Eigen::Map<const MatrixRM> am(a.data.data(), r, d);
      Eigen::Map<const MatrixRM> bm(b.data.data(), d, r);
      wm.noalias() += scale * (bm * am);
    }
  }
  params_.remove_prefix("lora.");
  lora_active_ = false;
}

// ---- checkpoint ----------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'U', 'M', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

using json = nlohmann::ordered_json;

json config_to_json(const ModelConfig& c) {
  return json{{"d_model", c.d_model},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"vocab_size", c.vocab_size},
              {"image_size", c.image_size},
              {"patch_size", c.patch_size},
              {"max_seq_len", c.max_seq_len},
              {"ff_mult", c.ff_mult},
              {"proj_dims", c.proj_dims},
              {"head_dims", c.head_dims},
              {"lora_rank", c.lora_rank},
              {"lora_alpha", c.lora_alpha},
              {"lora_dropout", c.lora_dropout},
              {"mask_decode_dim", c.mask_decode_dim}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_model = j.at("d_model").get<long>();
  c.n_layers = j.at("n_layers").get<long>();
  c.n_heads = j.at("n_heads").get<long>();
  c.vocab_size = j.at("vocab_size").get<long>();
  c.image_size = j.at("image_size").get<long>();
  c.patch_size = j.at("patch_size").get<long>();
  c.max_seq_len = j.at("max_seq_len").get<long>();
  c.ff_mult = j.at("ff_mult").get<long>();
  c.proj_dims = j.at("proj_dims").get<std::vector<long>>();
  c.head_dims = j.at("head_dims").get<std::vector<long>>();
  c.lora_rank = j.at("lora_rank").get<int>();
  c.lora_alpha = j.at("lora_alpha").get<double>();
  c.lora_dropout = j.at("lora_dropout").get<double>();
  c.mask_decode_dim = j.at("mask_decode_dim").get<long>();
  return c;
}

template <typename T>
void append_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T read_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw DataError("truncated checkpoint");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void FoodModel::save(const std::string& path) const {
  json header;
  header["version"] = kVersion;
  header["seed"] = seed_;
  header["lora_active"] = lora_active_;
  header["config"] = config_to_json(config_);
  header["vocab"] = json{{"tokens", vocab_.tokens()}, {"max_indices", vocab_.max_indices()}};
  json plist = json::array();
  for (const auto& name : params_.names()) {
    const Param& p = params_.at(name);
    plist.push_back(json{{"name", name}, {"shape", p.value.shape}, {"trainable", p.trainable}});
  }
  header["params"] = std::move(plist);
  std::string head = header.dump();

  std::string blob;
  blob.reserve(head.size() + 64);
  blob.append(kMagic, 4);
  append_le<std::uint32_t>(blob, kVersion);
  append_le<std::uint64_t>(blob, static_cast<std::uint64_t>(head.size()));
  blob += head;
  for (const auto& name : params_.names()) {
    const Param& p = params_.at(name);
    blob.append(reinterpret_cast<const char*>(p.value.data.data()),
                p.value.data.size() * sizeof(double));
  }
  write_file_atomic(path, blob);
}

FoodModel FoodModel::load(const std::string& path) {
  std::string blob = read_file(path);
  std::size_t pos = 0;
  if (blob.size() < 16 || std::memcmp(blob.data(), kMagic, 4) != 0)
    throw DataError("not a model checkpoint: " + path);
  pos = 4;
  auto version = read_le<std::uint32_t>(blob, pos);
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  auto head_len = read_le<std::uint64_t>(blob, pos);
  if (pos + head_len > blob.size()) throw DataError("truncated checkpoint header");
  json header = json::parse(blob.substr(pos, head_len), nullptr, false);
  if (header.is_discarded()) throw DataError("corrupt checkpoint header");
  pos += head_len;

  FoodModel model;
  model.config_ = config_from_json(header.at("config"));
  model.seed_ = header.at("seed").get<std::uint64_t>();
  model.lora_active_ = header.at("lora_active").get<bool>();
  model.vocab_ = Vocabulary::from_tokens(
      header.at("vocab").at("tokens").get<std::vector<std::string>>(),
      header.at("vocab").at("max_indices").get<int>());
  model.task_rows_ = 5 + 6L * model.vocab_.max_indices();
  model.config_.validate();

  for (const auto& pj : header.at("params")) {
    std::string name = pj.at("name").get<std::string>();
    auto shape = pj.at("shape").get<std::vector<long>>();
    bool trainable = pj.at("trainable").get<bool>();
    Tensor t(shape);
    std::size_t bytes = t.data.size() * sizeof(double);
    if (pos + bytes > blob.size()) throw DataError("truncated checkpoint tensor " + name);
    std::memcpy(t.data.data(), blob.data() + pos, bytes);
    pos += bytes;
    model.params_.add(name, std::move(t), trainable);
  }
  if (pos != blob.size()) throw DataError("trailing bytes in checkpoint");
  return model;
}

}  // namespace umami
