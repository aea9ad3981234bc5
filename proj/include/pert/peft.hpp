#pragma once

#include <set>
#include <string>
#include <utility>
#include <vector>

#include "pert/encoder.hpp"

namespace pert {

/// Which tuning method is active and its size knobs. Exactly one method per
/// encoder; attaching a second raises ConfigError.
struct PEConfig {
  PEMethod method = PEMethod::FineTune;
  std::size_t prefix_len = 100;        // prefix_v2: trainable K/V rows per layer
  std::size_t prompt_len = 100;        // input_prompt: prepended embedding rows
  std::size_t adapter_bottleneck = 48; // adapter: hidden width r
  bool share_across_encoders = false;

  void validate(const EncoderConfig& cfg) const;
};

/// The new tensors a method introduces, both in the structured form the
/// forward pass consumes and as (path, tensor) pairs for registration.
struct PEState {
  PEMethod method = PEMethod::FineTune;
  PEAttachment attachment;
  std::vector<std::pair<std::string, Tensor>> params;

  std::size_t total_elements() const;
};

/// Fresh PE tensors: prefix and prompt embeddings normal(0, 0.02); adapter
/// down projections normal(0, 0.02) with W_up and biases zero, so a freshly
/// attached adapter is an exact identity.
PEState make_pe_state(const EncoderConfig& cfg, const PEConfig& config, Rng& rng);

/// Registry paths that receive gradient updates; everything else is frozen.
using TrainableSet = std::set<std::string>;

struct AttachResult {
  PEState state;
  TrainableSet trainable;
};

/// Installs `state` into the model: prefix concatenation in every attention
/// layer, prompt prepending after embedding, or a bottleneck residual after
/// each FFN sublayer. fine_tune and bias_only change no forward behavior.
void attach_state(EncoderModel& model, const PEConfig& config, const PEState& state);

/// make_pe_state + attach_state + trainable set over the model's registry.
AttachResult attach(EncoderModel& model, const PEConfig& config, Rng& rng);

/// True for backbone bias terms: attention/FFN biases and layer-norm biases
/// ("only tune the bias terms"); gains and embeddings stay frozen.
bool is_bias_path(const std::string& path);

/// True for parameters introduced by a PE method (any "pe" path segment).
bool is_pe_path(const std::string& path);

/// fine_tune -> every path; bias_only -> bias paths; prefix_v2, input_prompt,
/// adapter -> exactly the PE paths.
TrainableSet trainable_paths(PEMethod method, const ParamRegistry& registry);

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double fraction = 0.0;
};

/// Exhaustive tensor-size sums over a registry.
ParamCounts count_parameters(const ParamRegistry& registry, const TrainableSet& trainable);

/// Closed-form counts from the config alone (no tensors materialized); the
/// independent route checked against count_parameters.
ParamCounts schema_counts(const EncoderConfig& cfg, const PEConfig& config);

}  // namespace pert
