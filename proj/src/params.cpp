#include "mtl/params.hpp"

#include <cstring>

namespace mtl {
namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
}

void fnv_tensor(std::uint64_t& h, const Tensor& t) {
  for (std::size_t d : t.shape()) {
    const std::uint64_t v = d;
    fnv(h, &v, sizeof v);
  }
  fnv(h, t.data().data(), t.size() * sizeof(double));
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

std::string head_prefix(std::string_view task_name) { return "task/" + std::string(task_name) + "/"; }

void register_params(Tape& tape, const ParamStore& store, std::string_view prefix, ParamVars& vars) {
  for (auto it = store.lower_bound(std::string(prefix)); it != store.end(); ++it) {
    if (it->first.compare(0, prefix.size(), prefix) != 0) break;
    vars.insert_or_assign(it->first, tape.parameter(it->first, it->second));
  }
}

bool decays(std::string_view name) {
  return !(ends_with(name, "/bias") || ends_with(name, "/gamma") || ends_with(name, "/beta"));
}

std::uint64_t fingerprint(const Tensor& tensor) {
  std::uint64_t h = kFnvOffset;
  fnv_tensor(h, tensor);
  return h;
}

std::uint64_t fingerprint(const ParamStore& store, std::string_view prefix) {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : store) {
    if (name.compare(0, prefix.size(), prefix) != 0) continue;
    fnv(h, name.data(), name.size());
    fnv_tensor(h, t);
  }
  return h;
}

std::size_t parameter_count(const ParamStore& store, std::string_view prefix) {
  std::size_t n = 0;
  for (const auto& [name, t] : store)
    if (name.compare(0, prefix.size(), prefix) == 0) n += t.size();
  return n;
}

}  // namespace mtl
