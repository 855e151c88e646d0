#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "mtl/params.hpp"
#include "mtl/random.hpp"
#include "mtl/tokenizer.hpp"

namespace mtl {

/// Shared transformer encoder shape. Defaults are the desk-scale
/// configuration (2 layers, hidden 128, 2 heads, feed-forward 512).
struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t max_positions = 128;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t ff = 512;
  double dropout = 0.1;
  double layer_norm_eps = 1e-12;
  double init_stddev = 0.02;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

enum class Mode { train, eval };

/// Truncated-normal initialization (two standard deviations), unit gains
/// and zero biases. Deterministic in `seed`.
ParamStore init_encoder_params(const EncoderConfig& config, std::uint64_t seed);

/// Copies the "shared/" tensors out of `checkpoint`, checking names and
/// shapes against `config`. Throws CheckpointError naming every offender.
ParamStore load_encoder_params(const EncoderConfig& config, const ParamStore& checkpoint);

/// Expected name -> shape of every encoder tensor.
std::map<std::string, Shape> encoder_param_shapes(const EncoderConfig& config);

struct EncoderOutput {
  Var hidden;  // [batch * seq, hidden]
  std::size_t batch = 0;
  std::size_t seq = 0;
};

/// Runs the encoder over a batch on `tape`. `vars` must hold the registered
/// "shared/" parameters. With trim_padding the batch is cut to its longest
/// real sequence; padded keys are masked out of attention either way.
/// `dropout_rng` is required in train mode when config.dropout > 0.
EncoderOutput encode_batch(const EncoderConfig& config, const ParamVars& vars, std::span<const EncodedInput> batch,
                           Mode mode, Rng* dropout_rng, bool trim_padding = true);

/// One hidden vector per input position ([length, hidden]), eval mode.
Tensor encode(const EncoderConfig& config, const ParamStore& params, const EncodedInput& input);

/// Attention weights of every layer for one input in eval mode,
/// [layers][heads * length, length].
std::vector<Tensor> encoder_attention_weights(const EncoderConfig& config, const ParamStore& params,
                                              const EncodedInput& input);

}  // namespace mtl
