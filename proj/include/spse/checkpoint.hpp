#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spse/tensor.hpp"

namespace spse {

/// Named tensor container ("SPSE" format).
///
/// Layout, all integers little-endian u32:
///   magic "SPSE" | version | entry count |
///   per entry: name length | UTF-8 name | rank | dims... | float64 LE payload
/// Entries keep insertion order, so identical contents serialize identically.
class Checkpoint {
 public:
  static constexpr std::uint32_t kVersion = 1;

  void put(const std::string& name, const Tensor& tensor);
  bool contains(const std::string& name) const;
  const Tensor& get(const std::string& name) const;
  std::optional<Tensor> find(const std::string& name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }
  /// Names starting with `prefix`, in insertion order.
  std::vector<std::string> names_with_prefix(const std::string& prefix) const;

  std::vector<std::uint8_t> to_bytes() const;
  static Checkpoint from_bytes(const std::vector<std::uint8_t>& bytes);

  void write(const std::filesystem::path& path) const;
  static Checkpoint read(const std::filesystem::path& path);

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace spse
