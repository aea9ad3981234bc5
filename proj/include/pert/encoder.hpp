#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pert/ops.hpp"
#include "pert/tensor.hpp"
#include "pert/vocab.hpp"

namespace pert {

struct EncoderConfig {
  std::size_t num_layers = 2;
  std::size_t d_model = 32;
  std::size_t num_heads = 4;
  std::size_t d_ff = 64;
  std::size_t vocab_size = 0;
  std::size_t max_seq_len = 64;
  double dropout = 0.1;
  Activation activation = Activation::Gelu;

  std::size_t d_head() const { return d_model / num_heads; }
  void validate() const;
};

/// Ordered path -> tensor map. Insertion order is the serialization order,
/// so it must be deterministic; duplicate paths are rejected.
class ParamRegistry {
 public:
  void add(const std::string& path, Tensor t);
  Tensor& get(const std::string& path);
  const Tensor& get(const std::string& path) const;
  bool contains(const std::string& path) const { return index_.count(path) > 0; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  /// Sum of tensor element counts.
  std::size_t total_elements() const;

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class PEMethod { FineTune, PrefixV2, InputPrompt, Adapter, BiasOnly };

PEMethod pe_method_from_string(const std::string& name);
const char* pe_method_name(PEMethod m);

/// Tensors a parameter-efficient method hangs off the encoder. Installed by
/// peft::attach; consulted by the forward pass.
struct PEAttachment {
  PEMethod method = PEMethod::FineTune;
  std::vector<Tensor> prefix_key;    // prefix_v2: per layer [prefix_len x d_model]
  std::vector<Tensor> prefix_value;  // prefix_v2: per layer [prefix_len x d_model]
  Tensor prompt;                     // input_prompt: [prompt_len x d_model]
  std::vector<Tensor> adapter_down_w;  // adapter: per layer [d_model x r]
  std::vector<Tensor> adapter_down_b;  // adapter: per layer [r]
  std::vector<Tensor> adapter_up_w;    // adapter: per layer [r x d_model]
  std::vector<Tensor> adapter_up_b;    // adapter: per layer [d_model]
};

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor attn_norm_gain, attn_norm_bias;
  Tensor w1, b1, w2, b2;
  Tensor ffn_norm_gain, ffn_norm_bias;
};

/// Transformer encoder: learned token + absolute position embeddings with a
/// post-embedding layer norm, then post-norm attention/FFN blocks.
/// Weights start normal(0, 0.02), biases zero, norm gains one.
struct EncoderModel {
  EncoderModel(const EncoderConfig& config, Rng& rng);

  EncoderConfig cfg;
  Tensor token_embedding;     // [vocab_size x d_model]
  Tensor position_embedding;  // [max_seq_len x d_model]
  Tensor embedding_norm_gain, embedding_norm_bias;
  std::vector<LayerParams> layers;

  /// Backbone parameters plus any attached PE parameters under "pe.".
  ParamRegistry registry;

  std::optional<PEAttachment> pe;
};

enum class Mode { Train, Eval };

/// Multi-head self-attention block: per head softmax(Q [Pk:K]^T / sqrt(d_head))
/// [Pv:V], heads concatenated, output projection, residual add, layer norm.
/// key_mask marks visible positions of h (0 = padding, masked to -inf before
/// softmax); prefix columns are always visible.
Tensor attention_layer(const EncoderModel& model, std::size_t layer_index, const Tensor& h,
                       const std::vector<std::uint8_t>& key_mask,
                       const std::optional<std::pair<Tensor, Tensor>>& prefix, Mode mode,
                       Rng* rng);

/// f(h W1 + b1) W2 + b2, then residual add and layer norm.
Tensor ffn_layer(const EncoderModel& model, std::size_t layer_index, const Tensor& h, Mode mode,
                 Rng* rng);

/// Prompt rows prepended to an embedded sequence; positions are not
/// re-applied to the shifted tokens.
Tensor apply_input_prompt(const Tensor& embedded, const Tensor& prompts,
                          std::size_t max_seq_len);

struct EncodeResult {
  Tensor hidden;              // [L' x d_model], L' = prompt_len + len(ids)
  Tensor pooled;              // [d_model], hidden state at the [CLS] position
  std::size_t prompt_offset;  // index of [CLS] in hidden
};

/// Full forward pass. Dropout fires only in Train mode (rng required then).
EncodeResult encode(const EncoderModel& model, const std::vector<int>& ids, Mode mode,
                    Rng* rng = nullptr);

}  // namespace pert
