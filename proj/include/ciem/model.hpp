#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string_view>
#include <vector>

#include "ciem/nncore.hpp"

namespace ciem {

enum class ConditionKind : std::uint8_t { kCategorical = 0, kContinuous = 1 };

std::string_view to_string(ConditionKind k);
ConditionKind condition_kind_from_string(std::string_view s);

/// A condition network sitting behind a gradient-reversal layer.
template <typename T>
struct ConditionHead {
  ConditionKind kind = ConditionKind::kCategorical;
  T lambda{0};
  Network<T> net;
  friend bool operator==(const ConditionHead&, const ConditionHead&) = default;
};

/// Shared trunk (the embedding extractor), the speaker classifier on top of
/// it, and zero or more condition heads.
template <typename T>
struct ModelBundle {
  Network<T> trunk;
  Network<T> speaker;
  std::vector<ConditionHead<T>> heads;

  std::size_t embedding_dim() const { return trunk.output_dim(); }
  void validate() const;
  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

template <typename To, typename From>
ModelBundle<To> bundle_cast(const ModelBundle<From>& b) {
  ModelBundle<To> out{network_cast<To>(b.trunk), network_cast<To>(b.speaker), {}};
  for (const auto& h : b.heads) {
    out.heads.push_back({h.kind, static_cast<To>(h.lambda), network_cast<To>(h.net)});
  }
  return out;
}

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Binary layout, all integers little-endian:
///   "CIEM" | version u32 | trunk layer count u32 | speaker layer count u32 |
///   trunk layers | speaker layers | head count u32 |
///   per head: kind u8, lambda f64, layer count u32, layers
/// Each layer: rows u32 | cols u32 | activation u8 | weights f32 row-major |
///   bias f32.
void write_model(std::ostream& os, const ModelBundle<float>& bundle);
ModelBundle<float> read_model(std::istream& is);
void save_model(const std::filesystem::path& path, const ModelBundle<float>& bundle);
ModelBundle<float> load_model(const std::filesystem::path& path);

}  // namespace ciem
