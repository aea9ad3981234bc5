#include "pert/encoder.hpp"

#include <cmath>
#include <limits>

#include "pert/errors.hpp"

namespace pert {

void EncoderConfig::validate() const {
  if (num_layers == 0 || d_model == 0 || num_heads == 0 || d_ff == 0 || vocab_size == 0) {
    throw ConfigError("encoder config: all dimensions must be positive");
  }
  if (d_model % num_heads != 0) {
    throw ConfigError("encoder config: d_model " + std::to_string(d_model) +
                      " not divisible by num_heads " + std::to_string(num_heads));
  }
  if (max_seq_len < 2) {
    throw ConfigError("encoder config: max_seq_len must be at least 2 for [CLS] and [SEP]");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ConfigError("encoder config: dropout must be in [0, 1)");
  }
}

void ParamRegistry::add(const std::string& path, Tensor t) {
  const auto [_, inserted] = index_.emplace(path, items_.size());
  if (!inserted) throw ConfigError("parameter registry: duplicate path '" + path + "'");
  items_.emplace_back(path, std::move(t));
}

Tensor& ParamRegistry::get(const std::string& path) {
  const auto it = index_.find(path);
  if (it == index_.end()) throw ConfigError("parameter registry: unknown path '" + path + "'");
  return items_[it->second].second;
}

const Tensor& ParamRegistry::get(const std::string& path) const {
  const auto it = index_.find(path);
  if (it == index_.end()) throw ConfigError("parameter registry: unknown path '" + path + "'");
  return items_[it->second].second;
}

std::size_t ParamRegistry::total_elements() const {
  std::size_t n = 0;
  for (const auto& [path, t] : items_) n += t.numel();
  return n;
}

PEMethod pe_method_from_string(const std::string& name) {
  if (name == "fine_tune") return PEMethod::FineTune;
  if (name == "prefix_v2") return PEMethod::PrefixV2;
  if (name == "input_prompt") return PEMethod::InputPrompt;
  if (name == "adapter") return PEMethod::Adapter;
  if (name == "bias_only") return PEMethod::BiasOnly;
  throw ConfigError("unknown PE method '" + name +
                    "' (expected fine_tune, prefix_v2, input_prompt, adapter, or bias_only)");
}

const char* pe_method_name(PEMethod m) {
  switch (m) {
    case PEMethod::FineTune: return "fine_tune";
    case PEMethod::PrefixV2: return "prefix_v2";
    case PEMethod::InputPrompt: return "input_prompt";
    case PEMethod::Adapter: return "adapter";
    case PEMethod::BiasOnly: return "bias_only";
  }
  return "?";
}

namespace {

constexpr double kInitStd = 0.02;

Tensor weight(const Shape& shape, Rng& rng) { return Tensor::randn(shape, rng, kInitStd, true); }
Tensor zeros_param(const Shape& shape) { return Tensor::zeros(shape, true); }
Tensor ones_param(const Shape& shape) { return Tensor::full(shape, 1.0, true); }

}  // namespace

EncoderModel::EncoderModel(const EncoderConfig& config, Rng& rng) : cfg(config) {
  cfg.validate();
  const std::size_t d = cfg.d_model;

  token_embedding = weight({cfg.vocab_size, d}, rng);
  position_embedding = weight({cfg.max_seq_len, d}, rng);
  embedding_norm_gain = ones_param({d});
  embedding_norm_bias = zeros_param({d});
  registry.add("token_embedding", token_embedding);
  registry.add("position_embedding", position_embedding);
  registry.add("embedding_norm.gain", embedding_norm_gain);
  registry.add("embedding_norm.bias", embedding_norm_bias);

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    LayerParams p;
    p.wq = weight({d, d}, rng);
    p.bq = zeros_param({d});
    p.wk = weight({d, d}, rng);
    p.bk = zeros_param({d});
    p.wv = weight({d, d}, rng);
    p.bv = zeros_param({d});
    p.wo = weight({d, d}, rng);
    p.bo = zeros_param({d});
    p.attn_norm_gain = ones_param({d});
    p.attn_norm_bias = zeros_param({d});
    p.w1 = weight({d, cfg.d_ff}, rng);
    p.b1 = zeros_param({cfg.d_ff});
    p.w2 = weight({cfg.d_ff, d}, rng);
    p.b2 = zeros_param({d});
    p.ffn_norm_gain = ones_param({d});
    p.ffn_norm_bias = zeros_param({d});

    const std::string base = "layer." + std::to_string(l) + ".";
    registry.add(base + "attn.wq", p.wq);
    registry.add(base + "attn.bq", p.bq);
    registry.add(base + "attn.wk", p.wk);
    registry.add(base + "attn.bk", p.bk);
    registry.add(base + "attn.wv", p.wv);
    registry.add(base + "attn.bv", p.bv);
    registry.add(base + "attn.wo", p.wo);
    registry.add(base + "attn.bo", p.bo);
    registry.add(base + "attn_norm.gain", p.attn_norm_gain);
    registry.add(base + "attn_norm.bias", p.attn_norm_bias);
    registry.add(base + "ffn.w1", p.w1);
    registry.add(base + "ffn.b1", p.b1);
    registry.add(base + "ffn.w2", p.w2);
    registry.add(base + "ffn.b2", p.b2);
    registry.add(base + "ffn_norm.gain", p.ffn_norm_gain);
    registry.add(base + "ffn_norm.bias", p.ffn_norm_bias);

    layers.push_back(std::move(p));
  }
}

namespace {

Tensor maybe_dropout(const Tensor& x, const EncoderModel& model, Mode mode, Rng* rng) {
  if (mode != Mode::Train || model.cfg.dropout == 0.0) return x;
  if (!rng) throw UsageError("encode: train mode requires an rng for dropout");
  return dropout(x, model.cfg.dropout, *rng);
}

}  // namespace

Tensor attention_layer(const EncoderModel& model, std::size_t layer_index, const Tensor& h,
                       const std::vector<std::uint8_t>& key_mask,
                       const std::optional<std::pair<Tensor, Tensor>>& prefix, Mode mode,
                       Rng* rng) {
  const auto& p = model.layers.at(layer_index);
  const std::size_t d = model.cfg.d_model;
  const std::size_t heads = model.cfg.num_heads;
  const std::size_t dh = model.cfg.d_head();
  const std::size_t len = h.dim(0);
  if (key_mask.size() != len) {
    throw ShapeError("attention: mask length " + std::to_string(key_mask.size()) +
                     " does not match sequence length " + std::to_string(len));
  }

  std::size_t prefix_len = 0;
  if (prefix) {
    if (prefix->first.rank() != 2 || prefix->first.dim(1) != d ||
        prefix->second.shape() != prefix->first.shape()) {
      throw ShapeError("attention: prefix shapes " + shape_str(prefix->first.shape()) + " / " +
                       shape_str(prefix->second.shape()) + " do not match d_model " +
                       std::to_string(d));
    }
    prefix_len = prefix->first.dim(0);
  }

  Tensor q = add_bias(matmul(h, p.wq), p.bq);
  Tensor k = add_bias(matmul(h, p.wk), p.bk);
  Tensor v = add_bias(matmul(h, p.wv), p.bv);

  // Key-side mask: 0 for visible columns, -inf for padding. Prefix columns
  // are never hidden.
  Tensor mask_bias = Tensor::zeros({prefix_len + len});
  for (std::size_t j = 0; j < len; ++j) {
    if (!key_mask[j]) {
      mask_bias.at(prefix_len + j) = -std::numeric_limits<double>::infinity();
    }
  }

  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t i = 0; i < heads; ++i) {
    Tensor qi = slice_cols(q, i * dh, dh);
    Tensor ki = slice_cols(k, i * dh, dh);
    Tensor vi = slice_cols(v, i * dh, dh);
    if (prefix_len > 0) {
      ki = concat0(slice_cols(prefix->first, i * dh, dh), ki);
      vi = concat0(slice_cols(prefix->second, i * dh, dh), vi);
    }
    Tensor logits = add_bias(scale(matmul(qi, transpose(ki)), inv_sqrt_dh), mask_bias);
    head_outputs.push_back(matmul(softmax_lastdim(logits), vi));
  }

  Tensor projected = add_bias(matmul(concat_cols(head_outputs), p.wo), p.bo);
  projected = maybe_dropout(projected, model, mode, rng);
  return layer_norm(add(h, projected), p.attn_norm_gain, p.attn_norm_bias);
}

Tensor ffn_layer(const EncoderModel& model, std::size_t layer_index, const Tensor& h, Mode mode,
                 Rng* rng) {
  const auto& p = model.layers.at(layer_index);
  Tensor inner = activation(add_bias(matmul(h, p.w1), p.b1), model.cfg.activation);
  Tensor out = add_bias(matmul(inner, p.w2), p.b2);
  out = maybe_dropout(out, model, mode, rng);
  return layer_norm(add(h, out), p.ffn_norm_gain, p.ffn_norm_bias);
}

Tensor apply_input_prompt(const Tensor& embedded, const Tensor& prompts,
                          std::size_t max_seq_len) {
  if (prompts.rank() != 2 || prompts.dim(1) != embedded.dim(1)) {
    throw ShapeError("input prompt: prompt shape " + shape_str(prompts.shape()) +
                     " does not match embedding width " + std::to_string(embedded.dim(1)));
  }
  if (prompts.dim(0) == 0) return embedded;
  if (prompts.dim(0) + embedded.dim(0) > max_seq_len) {
    throw ConfigError("input prompt: prompt length " + std::to_string(prompts.dim(0)) +
                      " plus sequence length " + std::to_string(embedded.dim(0)) +
                      " exceeds max_seq_len " + std::to_string(max_seq_len));
  }
  return concat0(prompts, embedded);
}

namespace {

Tensor adapter_block(const PEAttachment& pe, std::size_t layer_index, const Tensor& h) {
  Tensor inner = relu(add_bias(matmul(h, pe.adapter_down_w[layer_index]),
                               pe.adapter_down_b[layer_index]));
  Tensor up = add_bias(matmul(inner, pe.adapter_up_w[layer_index]), pe.adapter_up_b[layer_index]);
  return add(h, up);
}

}  // namespace

EncodeResult encode(const EncoderModel& model, const std::vector<int>& ids, Mode mode, Rng* rng) {
  if (ids.empty()) throw UsageError("encode: empty id sequence");
  if (ids.size() > model.cfg.max_seq_len) {
    throw UsageError("encode: sequence length " + std::to_string(ids.size()) +
                     " exceeds max_seq_len " + std::to_string(model.cfg.max_seq_len));
  }
  std::vector<std::size_t> rows;
  rows.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= model.cfg.vocab_size) {
      throw VocabError("encode: token id " + std::to_string(id) + " outside vocabulary of size " +
                       std::to_string(model.cfg.vocab_size));
    }
    rows.push_back(static_cast<std::size_t>(id));
  }

  Tensor embedded = add(gather_rows(model.token_embedding, rows),
                        slice_rows(model.position_embedding, 0, ids.size()));
  embedded = layer_norm(embedded, model.embedding_norm_gain, model.embedding_norm_bias);

  std::size_t prompt_offset = 0;
  if (model.pe && model.pe->method == PEMethod::InputPrompt && model.pe->prompt.defined() &&
      model.pe->prompt.dim(0) > 0) {
    embedded = apply_input_prompt(embedded, model.pe->prompt, model.cfg.max_seq_len);
    prompt_offset = model.pe->prompt.dim(0);
  }
  embedded = maybe_dropout(embedded, model, mode, rng);

  // Prompt positions are visible; only [PAD] tokens are masked.
  std::vector<std::uint8_t> mask(prompt_offset + ids.size(), 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == Vocabulary::kPad) mask[prompt_offset + i] = 0;
  }

  const bool prefixed = model.pe && model.pe->method == PEMethod::PrefixV2 &&
                        !model.pe->prefix_key.empty() && model.pe->prefix_key[0].dim(0) > 0;
  Tensor h = embedded;
  for (std::size_t l = 0; l < model.cfg.num_layers; ++l) {
    std::optional<std::pair<Tensor, Tensor>> prefix;
    if (prefixed) prefix = std::make_pair(model.pe->prefix_key[l], model.pe->prefix_value[l]);
    h = attention_layer(model, l, h, mask, prefix, mode, rng);
    h = ffn_layer(model, l, h, mode, rng);
    if (model.pe && model.pe->method == PEMethod::Adapter) {
      h = adapter_block(*model.pe, l, h);
    }
  }

  return EncodeResult{h, row(h, prompt_offset), prompt_offset};
}

}  // namespace pert
