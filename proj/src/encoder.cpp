#include "mtl/encoder.hpp"

#include <algorithm>

#include "mtl/errors.hpp"
#include "mtl/ops.hpp"

namespace mtl {
namespace {

std::string layer_name(std::size_t layer, std::string_view rest) {
  return "shared/layer" + std::to_string(layer) + "/" + std::string(rest);
}

Var dense(const ParamVars& vars, const std::string& prefix, Var x) {
  return add_bias(matmul(x, vars.at(prefix + "/weight")), vars.at(prefix + "/bias"));
}

Var norm(const ParamVars& vars, const std::string& prefix, Var x, double eps) {
  return layer_norm(x, vars.at(prefix + "/gamma"), vars.at(prefix + "/beta"), eps);
}

Var maybe_dropout(Var x, double p, Mode mode, Rng* rng) {
  if (mode == Mode::eval || p == 0.0) return x;
  if (rng == nullptr) throw ContractViolation("encoder: train mode with dropout needs a mask generator");
  return dropout(x, p, *rng);
}

EncoderOutput run_encoder(const EncoderConfig& config, const ParamVars& vars, std::span<const EncodedInput> batch,
                          Mode mode, Rng* rng, bool trim_padding, std::vector<Tensor>* attention_out) {
  if (batch.empty()) throw ContractViolation("encoder: empty batch");
  std::size_t seq = 0;
  for (const auto& in : batch) {
    if (in.length() > config.max_positions)
      throw ContractViolation("encoder: input length " + std::to_string(in.length()) + " exceeds max_positions " +
                              std::to_string(config.max_positions));
    if (in.segment_ids.size() != in.length() || in.attention_mask.size() != in.length())
      throw ContractViolation("encoder: ragged encoded input");
    seq = std::max(seq, trim_padding ? in.real_length() : in.length());
  }
  for (const auto& in : batch)
    if (in.length() < seq) throw ContractViolation("encoder: inputs in a batch must share their padded length");

  const std::size_t n = batch.size();
  std::vector<int> ids(n * seq), segments(n * seq), positions(n * seq), mask(n * seq);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t j = 0; j < seq; ++j) {
      ids[b * seq + j] = batch[b].token_ids[j];
      segments[b * seq + j] = batch[b].segment_ids[j];
      positions[b * seq + j] = static_cast<int>(j);
      mask[b * seq + j] = batch[b].attention_mask[j];
    }
  }

  Var x = add(add(embedding(vars.at("shared/emb/token"), ids), embedding(vars.at("shared/emb/position"), positions)),
              embedding(vars.at("shared/emb/segment"), segments));
  x = norm(vars, "shared/emb/norm", x, config.layer_norm_eps);
  x = maybe_dropout(x, config.dropout, mode, rng);

  for (std::size_t l = 0; l < config.layers; ++l) {
    Var q = dense(vars, layer_name(l, "attn/query"), x);
    Var k = dense(vars, layer_name(l, "attn/key"), x);
    Var v = dense(vars, layer_name(l, "attn/value"), x);
    if (attention_out) attention_out->push_back(attention_weights(q.value(), k.value(), mask, n, seq, config.heads));
    Var ctx = self_attention(q, k, v, mask, n, seq, config.heads);
    Var attn = maybe_dropout(dense(vars, layer_name(l, "attn/output"), ctx), config.dropout, mode, rng);
    x = norm(vars, layer_name(l, "attn/norm"), add(x, attn), config.layer_norm_eps);

    Var inner = gelu(dense(vars, layer_name(l, "ff/inner"), x));
    Var outer = maybe_dropout(dense(vars, layer_name(l, "ff/outer"), inner), config.dropout, mode, rng);
    x = norm(vars, layer_name(l, "ff/norm"), add(x, outer), config.layer_norm_eps);
  }
  return EncoderOutput{x, n, seq};
}

}  // namespace

void EncoderConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("encoder config: " + what); };
  if (vocab_size < 5) fail("vocab_size must cover the special tokens");
  if (max_positions < 3) fail("max_positions must be >= 3");
  if (hidden == 0 || layers == 0 || heads == 0 || ff == 0) fail("sizes must be positive");
  if (hidden % heads != 0) fail("hidden size " + std::to_string(hidden) + " not divisible by " +
                                std::to_string(heads) + " heads");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
  if (!(layer_norm_eps > 0.0)) fail("layer_norm_eps must be positive");
  if (!(init_stddev > 0.0)) fail("init_stddev must be positive");
}

std::map<std::string, Shape> encoder_param_shapes(const EncoderConfig& c) {
  std::map<std::string, Shape> shapes;
  shapes["shared/emb/token"] = {c.vocab_size, c.hidden};
  shapes["shared/emb/position"] = {c.max_positions, c.hidden};
  shapes["shared/emb/segment"] = {2, c.hidden};
  shapes["shared/emb/norm/gamma"] = {c.hidden};
  shapes["shared/emb/norm/beta"] = {c.hidden};
  for (std::size_t l = 0; l < c.layers; ++l) {
    for (const char* proj : {"attn/query", "attn/key", "attn/value", "attn/output"}) {
      shapes[layer_name(l, proj) + "/weight"] = {c.hidden, c.hidden};
      shapes[layer_name(l, proj) + "/bias"] = {c.hidden};
    }
    shapes[layer_name(l, "ff/inner/weight")] = {c.hidden, c.ff};
    shapes[layer_name(l, "ff/inner/bias")] = {c.ff};
    shapes[layer_name(l, "ff/outer/weight")] = {c.ff, c.hidden};
    shapes[layer_name(l, "ff/outer/bias")] = {c.hidden};
    for (const char* n : {"attn/norm", "ff/norm"}) {
      shapes[layer_name(l, n) + "/gamma"] = {c.hidden};
      shapes[layer_name(l, n) + "/beta"] = {c.hidden};
    }
  }
  return shapes;
}

ParamStore init_encoder_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "encoder-init"));
  ParamStore params;
  // std::map iteration order makes the draw order a function of the names.
  for (const auto& [name, shape] : encoder_param_shapes(config)) {
    Tensor t(shape);
    if (name.ends_with("/gamma")) {
      t.fill(1.0);
    } else if (!name.ends_with("/bias") && !name.ends_with("/beta")) {
      for (double& v : t.data()) v = rng.truncated_normal(config.init_stddev);
    }
    params.emplace(name, std::move(t));
  }
  return params;
}

ParamStore load_encoder_params(const EncoderConfig& config, const ParamStore& checkpoint) {
  config.validate();
  ParamStore params;
  std::string problems;
  for (const auto& [name, shape] : encoder_param_shapes(config)) {
    auto it = checkpoint.find(name);
    if (it == checkpoint.end()) {
      problems += "\n  missing " + name;
    } else if (it->second.shape() != shape) {
      problems += "\n  " + name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                  shape_string(shape);
    } else {
      params.emplace(name, it->second);
    }
  }
  for (const auto& [name, t] : checkpoint) {
    if (name.starts_with(kSharedPrefix) && !params.count(name) && problems.find(name) == std::string::npos)
      problems += "\n  unexpected " + name;
  }
  if (!problems.empty()) throw CheckpointError("checkpoint does not match encoder config:" + problems);
  return params;
}

EncoderOutput encode_batch(const EncoderConfig& config, const ParamVars& vars, std::span<const EncodedInput> batch,
                           Mode mode, Rng* dropout_rng, bool trim_padding) {
  return run_encoder(config, vars, batch, mode, dropout_rng, trim_padding, nullptr);
}

Tensor encode(const EncoderConfig& config, const ParamStore& params, const EncodedInput& input) {
  Tape tape;
  ParamVars vars;
  register_params(tape, params, kSharedPrefix, vars);
  EncoderOutput out = run_encoder(config, vars, std::span(&input, 1), Mode::eval, nullptr, false, nullptr);
  return out.hidden.value();
}

std::vector<Tensor> encoder_attention_weights(const EncoderConfig& config, const ParamStore& params,
                                              const EncodedInput& input) {
  Tape tape;
  ParamVars vars;
  register_params(tape, params, kSharedPrefix, vars);
  std::vector<Tensor> weights;
  run_encoder(config, vars, std::span(&input, 1), Mode::eval, nullptr, false, &weights);
  return weights;
}

}  // namespace mtl
