#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "mtl/tape.hpp"
#include "mtl/tensor.hpp"

namespace mtl {

/// Named parameters ordered by name. Encoder tensors live under "shared/",
/// task heads under "task/<name>/".
using ParamStore = std::map<std::string, Tensor>;

/// Tape handles for registered parameters, keyed like the store.
using ParamVars = std::map<std::string, Var>;

inline constexpr std::string_view kSharedPrefix = "shared/";

std::string head_prefix(std::string_view task_name);

/// Registers every parameter whose name starts with `prefix`.
void register_params(Tape& tape, const ParamStore& store, std::string_view prefix, ParamVars& vars);

/// Weight decay applies to weight matrices and embeddings, not to biases or
/// normalization parameters.
bool decays(std::string_view name);

/// FNV-1a over names, shapes and raw bytes. Used to compare parameter sets.
std::uint64_t fingerprint(const ParamStore& store, std::string_view prefix = "");
std::uint64_t fingerprint(const Tensor& tensor);

std::size_t parameter_count(const ParamStore& store, std::string_view prefix = "");

}  // namespace mtl
