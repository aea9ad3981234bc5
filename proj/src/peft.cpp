#include "pert/peft.hpp"

#include "pert/errors.hpp"

namespace pert {

void PEConfig::validate(const EncoderConfig& cfg) const {
  switch (method) {
    case PEMethod::InputPrompt:
      if (prompt_len + 2 > cfg.max_seq_len) {
        throw ConfigError("input_prompt: prompt_len " + std::to_string(prompt_len) +
                          " leaves no room in max_seq_len " + std::to_string(cfg.max_seq_len));
      }
      break;
    case PEMethod::Adapter:
      if (adapter_bottleneck == 0) {
        throw ConfigError("adapter: bottleneck width must be positive");
      }
      break;
    default:
      break;
  }
}

std::size_t PEState::total_elements() const {
  std::size_t n = 0;
  for (const auto& [path, t] : params) n += t.numel();
  return n;
}

PEState make_pe_state(const EncoderConfig& cfg, const PEConfig& config, Rng& rng) {
  config.validate(cfg);
  PEState state;
  state.method = config.method;
  state.attachment.method = config.method;
  const std::size_t d = cfg.d_model;

  switch (config.method) {
    case PEMethod::PrefixV2:
      for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        Tensor pk = Tensor::randn({config.prefix_len, d}, rng, 0.02, true);
        Tensor pv = Tensor::randn({config.prefix_len, d}, rng, 0.02, true);
        state.attachment.prefix_key.push_back(pk);
        state.attachment.prefix_value.push_back(pv);
        const std::string base = "pe.prefix." + std::to_string(l) + ".";
        state.params.emplace_back(base + "key", pk);
        state.params.emplace_back(base + "value", pv);
      }
      break;
    case PEMethod::InputPrompt:
      state.attachment.prompt = Tensor::randn({config.prompt_len, d}, rng, 0.02, true);
      state.params.emplace_back("pe.prompt", state.attachment.prompt);
      break;
    case PEMethod::Adapter:
      for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        const std::size_t r = config.adapter_bottleneck;
        Tensor down_w = Tensor::randn({d, r}, rng, 0.02, true);
        Tensor down_b = Tensor::zeros({r}, true);
        Tensor up_w = Tensor::zeros({r, d}, true);  // zero so attachment starts as identity
        Tensor up_b = Tensor::zeros({d}, true);
        state.attachment.adapter_down_w.push_back(down_w);
        state.attachment.adapter_down_b.push_back(down_b);
        state.attachment.adapter_up_w.push_back(up_w);
        state.attachment.adapter_up_b.push_back(up_b);
        const std::string base = "pe.adapter." + std::to_string(l) + ".";
        state.params.emplace_back(base + "down_w", down_w);
        state.params.emplace_back(base + "down_b", down_b);
        state.params.emplace_back(base + "up_w", up_w);
        state.params.emplace_back(base + "up_b", up_b);
      }
      break;
    case PEMethod::FineTune:
    case PEMethod::BiasOnly:
      break;
  }
  return state;
}

void attach_state(EncoderModel& model, const PEConfig& config, const PEState& state) {
  if (model.pe) {
    throw ConfigError("attach: model already has method '" + std::string(pe_method_name(
                          model.pe->method)) + "' attached; methods do not compose");
  }
  config.validate(model.cfg);
  if (state.method != config.method) {
    throw ConfigError("attach: state method does not match config method");
  }
  const std::size_t d = model.cfg.d_model;
  for (const auto& [path, t] : state.params) {
    if (t.rank() == 2 && t.dim(1) != d && path.find("down_w") == std::string::npos) {
      // down_w is [d x r]; everything else PE-shaped ends in d_model columns
      throw ConfigError("attach: parameter '" + path + "' has shape " + shape_str(t.shape()) +
                        ", incompatible with d_model " + std::to_string(d));
    }
  }
  if (config.method == PEMethod::PrefixV2 &&
      state.attachment.prefix_key.size() != model.cfg.num_layers) {
    throw ConfigError("attach: prefix state has " +
                      std::to_string(state.attachment.prefix_key.size()) + " layers, model has " +
                      std::to_string(model.cfg.num_layers));
  }
  if (config.method == PEMethod::Adapter &&
      state.attachment.adapter_down_w.size() != model.cfg.num_layers) {
    throw ConfigError("attach: adapter state layer count mismatch");
  }

  model.pe = state.attachment;
  for (const auto& [path, t] : state.params) model.registry.add(path, t);
}

AttachResult attach(EncoderModel& model, const PEConfig& config, Rng& rng) {
  PEState state = make_pe_state(model.cfg, config, rng);
  attach_state(model, config, state);
  return AttachResult{std::move(state), trainable_paths(config.method, model.registry)};
}

namespace {

std::string leaf_of(const std::string& path) {
  const auto pos = path.rfind('.');
  return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace

bool is_bias_path(const std::string& path) {
  const std::string leaf = leaf_of(path);
  return leaf == "bq" || leaf == "bk" || leaf == "bv" || leaf == "bo" || leaf == "b1" ||
         leaf == "b2" || leaf == "bias";
}

bool is_pe_path(const std::string& path) {
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t end = path.find('.', start);
    const std::string seg = path.substr(start, end == std::string::npos ? end : end - start);
    if (seg == "pe") return true;
    if (end == std::string::npos) break;
    start = end + 1;
  }
  return false;
}

TrainableSet trainable_paths(PEMethod method, const ParamRegistry& registry) {
  TrainableSet out;
  for (const auto& [path, t] : registry.items()) {
    switch (method) {
      case PEMethod::FineTune:
        out.insert(path);
        break;
      case PEMethod::BiasOnly:
        if (is_bias_path(path)) out.insert(path);
        break;
      case PEMethod::PrefixV2:
      case PEMethod::InputPrompt:
      case PEMethod::Adapter:
        if (is_pe_path(path)) out.insert(path);
        break;
    }
  }
  return out;
}

ParamCounts count_parameters(const ParamRegistry& registry, const TrainableSet& trainable) {
  ParamCounts counts;
  for (const auto& [path, t] : registry.items()) {
    counts.total += t.numel();
    if (trainable.count(path)) counts.trainable += t.numel();
  }
  counts.fraction =
      counts.total == 0 ? 0.0 : static_cast<double>(counts.trainable) / static_cast<double>(counts.total);
  return counts;
}

ParamCounts schema_counts(const EncoderConfig& cfg, const PEConfig& config) {
  const std::size_t d = cfg.d_model, ff = cfg.d_ff, L = cfg.num_layers;
  const std::size_t per_layer = 4 * (d * d + d)     // q/k/v/o projections
                                + 2 * d             // attention norm
                                + d * ff + ff       // ffn in
                                + ff * d + d        // ffn out
                                + 2 * d;            // ffn norm
  const std::size_t backbone = cfg.vocab_size * d + cfg.max_seq_len * d + 2 * d + L * per_layer;

  std::size_t pe = 0;
  switch (config.method) {
    case PEMethod::PrefixV2: pe = 2 * L * config.prefix_len * d; break;
    case PEMethod::InputPrompt: pe = config.prompt_len * d; break;
    case PEMethod::Adapter: {
      const std::size_t r = config.adapter_bottleneck;
      pe = L * (d * r + r + r * d + d);
      break;
    }
    case PEMethod::FineTune:
    case PEMethod::BiasOnly:
      break;
  }

  ParamCounts counts;
  counts.total = backbone + pe;
  switch (config.method) {
    case PEMethod::FineTune: counts.trainable = counts.total; break;
    case PEMethod::BiasOnly:
      counts.trainable = L * (4 * d + ff + d + 2 * d) + d;  // attn/ffn biases + norm biases
      break;
    default: counts.trainable = pe; break;
  }
  counts.fraction =
      counts.total == 0 ? 0.0 : static_cast<double>(counts.trainable) / static_cast<double>(counts.total);
  return counts;
}

}  // namespace pert
