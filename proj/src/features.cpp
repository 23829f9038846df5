#include "evact/features.hpp"

#include "binary_io.hpp"

#include <cmath>

namespace evact {

namespace {
constexpr std::string_view kMagic = "FTR1";
}

void FeatureSequence::append(std::span<const float> v) {
  if (dim == 0) dim = static_cast<std::uint32_t>(v.size());
  if (v.size() != dim) throw ArgumentError("feature vector dimension mismatch");
  values.insert(values.end(), v.begin(), v.end());
}

FeatureSequence frames_to_features(const std::vector<DenseArray>& frames, std::uint32_t pool_factor,
                                   std::string clip_id, std::optional<std::uint32_t> label) {
  FeatureSequence seq;
  seq.clip_id = std::move(clip_id);
  seq.label = label;
  for (const DenseArray& f : frames) {
    if (!f.same_shape(frames.front())) throw ArgumentError("frames have inconsistent shapes");
    const DenseArray pooled = downsample(f, pool_factor, Pooling::kMax);
    seq.append(pooled.data);
  }
  return seq;
}

std::string serialize_features(const FeatureSequence& seq) {
  for (float v : seq.values) {
    if (!std::isfinite(v)) throw ArgumentError("non-finite feature value");
  }
  detail::ByteWriter out;
  out.put_bytes(kMagic);
  out.put<std::uint32_t>(seq.dim);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(seq.count()));
  out.put<std::uint8_t>(seq.label ? 1 : 0);
  out.put<std::uint32_t>(seq.label.value_or(0));
  out.put_string(seq.clip_id);
  out.put_bytes(std::string_view(reinterpret_cast<const char*>(seq.values.data()),
                                 seq.values.size() * sizeof(float)));
  return out.take();
}

FeatureSequence parse_features(std::string_view bytes) {
  using Kind = FeatureFormatError::Kind;
  if (bytes.substr(0, 4) != kMagic) {
    throw FeatureFormatError(Kind::kBadMagic, "magic mismatch, expected FTR1", 0);
  }
  detail::ByteReader in(bytes.substr(4));
  FeatureSequence seq;
  std::uint32_t count = 0;
  try {
    seq.dim = in.get<std::uint32_t>();
    count = in.get<std::uint32_t>();
    const bool has_label = in.get<std::uint8_t>() != 0;
    const auto label = in.get<std::uint32_t>();
    if (has_label) seq.label = label;
    seq.clip_id = in.get_string();
  } catch (const ParseError&) {
    throw FeatureFormatError(Kind::kTruncated, "truncated header", 4 + in.pos());
  }
  const std::size_t want = std::size_t{count} * seq.dim * sizeof(float);
  if (in.remaining() < want) {
    throw FeatureFormatError(Kind::kTruncated, "truncated payload", 4 + in.pos());
  }
  if (in.remaining() > want) {
    throw FeatureFormatError(Kind::kTruncated, "payload longer than header declares",
                             4 + in.pos() + want);
  }
  const std::size_t payload_start = 4 + in.pos();
  seq.values.resize(std::size_t{count} * seq.dim);
  const auto raw = in.get_bytes(want);
  std::memcpy(seq.values.data(), raw.data(), want);
  for (std::size_t i = 0; i < seq.values.size(); ++i) {
    if (!std::isfinite(seq.values[i])) {
      throw FeatureFormatError(Kind::kNonFinite, "non-finite feature",
                               payload_start + i * sizeof(float));
    }
  }
  return seq;
}

FeatureSequence read_features(const std::filesystem::path& path) {
  return parse_features(detail::read_file(path));
}

void write_features(const std::filesystem::path& path, const FeatureSequence& seq) {
  detail::write_file_atomic(path, serialize_features(seq));
}

}  // namespace evact
