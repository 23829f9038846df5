#pragma once

#include "evact/event.hpp"

#include <filesystem>
#include <string>
#include <string_view>

namespace evact {

enum class EventFormat { kCsv, kBinary };

// CSV: first line "H W", then one "t x y p" record per line.
// Binary: "EVS1", u32 H, u32 W, u64 count, count x (u64 t, u16 x, u16 y, u8 p), little-endian.
// Out-of-order records are stably sorted; malformed records raise ParseError with
// the byte offset, out-of-geometry records raise ValidationError.
EventStream parse_events(std::string_view bytes, EventFormat format);
std::string serialize_events(const EventStream& stream, EventFormat format);

// Sniffs the format from the leading magic.
EventFormat detect_event_format(std::string_view bytes);

EventStream read_event_file(const std::filesystem::path& path);
void write_event_file(const std::filesystem::path& path, const EventStream& stream,
                      EventFormat format = EventFormat::kBinary);

}  // namespace evact
