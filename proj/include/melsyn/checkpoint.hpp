#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "melsyn/numerics.hpp"

namespace melsyn {

// Archive layout: magic "MSCK", u32 LE header length, UTF-8 JSON header,
// u32 LE record count, then per record u32 LE name length, the name bytes and
// one MELT tensor.
struct Checkpoint {
  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  bool contains(const std::string& name) const;
  const Tensor<float>& at(const std::string& name) const;
  void add(std::string name, Tensor<float> tensor);

  /// Adds every parameter as `prefix + name` (2-d tensors).
  void add_params(const std::string& prefix, const ParamSet<float>& params);
  /// Fills `like` from `prefix + name` records, checking shapes.
  ParamSet<float> read_params(const std::string& prefix, const ParamSet<float>& like) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace melsyn
