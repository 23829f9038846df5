#pragma once

#include "evact/errors.hpp"
#include "evact/representations.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evact {

// Per-frame (or per-blob) feature vectors of one clip.
struct FeatureSequence {
  std::uint32_t dim{0};
  std::vector<float> values;  // count() x dim, row-major
  std::string clip_id;
  std::optional<std::uint32_t> label;

  std::size_t count() const { return dim == 0 ? 0 : values.size() / dim; }
  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(values).subspan(i * dim, dim);
  }
  void append(std::span<const float> v);

  bool operator==(const FeatureSequence&) const = default;
};

// Max-pools each dense frame by `pool_factor`, then flattens row-major with
// channels innermost: dim = ⌈H/f⌉·⌈W/f⌉·C.
FeatureSequence frames_to_features(const std::vector<DenseArray>& frames, std::uint32_t pool_factor,
                                   std::string clip_id = {},
                                   std::optional<std::uint32_t> label = std::nullopt);

// Feature file: "FTR1", u32 dim, u32 count, u8 has_label, u32 label,
// u32-length-prefixed UTF-8 clip_id, then count*dim little-endian f32.
class FeatureFormatError : public ParseError {
 public:
  enum class Kind { kBadMagic, kTruncated, kNonFinite };
  FeatureFormatError(Kind kind, const std::string& what, std::uint64_t offset)
      : ParseError(what, offset), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

std::string serialize_features(const FeatureSequence& seq);
FeatureSequence parse_features(std::string_view bytes);

FeatureSequence read_features(const std::filesystem::path& path);
void write_features(const std::filesystem::path& path, const FeatureSequence& seq);

}  // namespace evact
