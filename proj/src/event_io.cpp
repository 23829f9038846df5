#include "evact/event_io.hpp"

#include "binary_io.hpp"

#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>

namespace evact {

namespace {

constexpr std::string_view kBinaryMagic = "EVS1";

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

// Splits one line into unsigned integer fields; false on any non-numeric token.
bool parse_fields(std::string_view line, std::uint64_t* out, std::size_t want) {
  std::size_t n = 0;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && is_space(line[i])) ++i;
    if (i == line.size()) break;
    if (n == want) return false;
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(line.data() + i, line.data() + line.size(), v);
    if (ec != std::errc{}) return false;
    const auto end = static_cast<std::size_t>(ptr - line.data());
    if (end < line.size() && !is_space(line[end])) return false;
    out[n++] = v;
    i = end;
  }
  return n == want;
}

bool is_blank(std::string_view line) {
  for (char c : line) {
    if (!is_space(c)) return false;
  }
  return true;
}

Event checked_event(std::uint64_t t, std::uint64_t x, std::uint64_t y, std::uint64_t p,
                    const Geometry& g, std::size_t index) {
  if (t > static_cast<std::uint64_t>(std::numeric_limits<Micros>::max())) {
    throw ValidationError("record " + std::to_string(index) + ": timestamp exceeds 63 bits");
  }
  if (x >= g.width || y >= g.height) {
    throw ValidationError("record " + std::to_string(index) + ": coordinate (" +
                          std::to_string(x) + ", " + std::to_string(y) + ") outside " +
                          std::to_string(g.height) + "x" + std::to_string(g.width));
  }
  if (p > 1) {
    throw ValidationError("record " + std::to_string(index) + ": polarity must be 0 or 1");
  }
  return Event{static_cast<Micros>(t), static_cast<std::uint16_t>(x),
               static_cast<std::uint16_t>(y), static_cast<std::uint8_t>(p)};
}

void check_geometry(std::uint64_t h, std::uint64_t w, std::uint64_t offset) {
  if (h == 0 || w == 0 || h > 65536 || w > 65536) {
    throw ParseError("geometry must be within 1..65536", offset);
  }
}

EventStream parse_csv(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) -> bool {
    if (pos >= bytes.size()) return false;
    const auto nl = bytes.find('\n', pos);
    const auto end = nl == std::string_view::npos ? bytes.size() : nl;
    line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return true;
  };

  std::string_view line;
  std::size_t line_start = 0;
  do {
    line_start = pos;
    if (!next_line(line)) throw ParseError("missing geometry header", 0);
  } while (is_blank(line));

  std::uint64_t hw[2];
  if (!parse_fields(line, hw, 2)) throw ParseError("header must be \"H W\"", line_start);
  check_geometry(hw[0], hw[1], line_start);
  const Geometry g{static_cast<std::uint32_t>(hw[0]), static_cast<std::uint32_t>(hw[1])};

  std::vector<Event> events;
  events.reserve(bytes.size() / 12);
  for (;;) {
    line_start = pos;
    if (!next_line(line)) break;
    if (is_blank(line)) continue;
    std::uint64_t f[4];
    if (!parse_fields(line, f, 4)) {
      throw ParseError("malformed event record, expected \"t x y p\"", line_start);
    }
    events.push_back(checked_event(f[0], f[1], f[2], f[3], g, events.size()));
  }
  return EventStream(g, std::move(events));
}

EventStream parse_binary(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.get_bytes(4) != kBinaryMagic) throw ParseError("bad magic, expected EVS1", 0);
  const auto h = in.get<std::uint32_t>();
  const auto w = in.get<std::uint32_t>();
  check_geometry(h, w, 4);
  const Geometry g{h, w};
  const auto count = in.get<std::uint64_t>();
  constexpr std::size_t kRecord = 8 + 2 + 2 + 1;
  if (count > in.remaining() / kRecord || in.remaining() != count * kRecord) {
    throw ParseError("payload length does not match declared count " + std::to_string(count),
                     in.pos());
  }
  std::vector<Event> events;
  events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto t = in.get<std::uint64_t>();
    const auto x = in.get<std::uint16_t>();
    const auto y = in.get<std::uint16_t>();
    const auto p = in.get<std::uint8_t>();
    events.push_back(checked_event(t, x, y, p, g, i));
  }
  return EventStream(g, std::move(events));
}

}  // namespace

EventFormat detect_event_format(std::string_view bytes) {
  return bytes.substr(0, 4) == kBinaryMagic ? EventFormat::kBinary : EventFormat::kCsv;
}

EventStream parse_events(std::string_view bytes, EventFormat format) {
  return format == EventFormat::kCsv ? parse_csv(bytes) : parse_binary(bytes);
}

std::string serialize_events(const EventStream& stream, EventFormat format) {
  const Geometry& g = stream.geometry();
  if (format == EventFormat::kCsv) {
    std::string out = std::to_string(g.height) + " " + std::to_string(g.width) + "\n";
    out.reserve(out.size() + stream.size() * 16);
    char buf[64];
    for (const Event& e : stream.events()) {
      char* p = buf;
      for (std::uint64_t v : {static_cast<std::uint64_t>(e.t), std::uint64_t{e.x},
                              std::uint64_t{e.y}, std::uint64_t{e.p}}) {
        p = std::to_chars(p, buf + sizeof(buf), v).ptr;
        *p++ = ' ';
      }
      p[-1] = '\n';
      out.append(buf, p);
    }
    return out;
  }
  detail::ByteWriter out;
  out.reserve(20 + stream.size() * 13);
  out.put_bytes(kBinaryMagic);
  out.put<std::uint32_t>(g.height);
  out.put<std::uint32_t>(g.width);
  out.put<std::uint64_t>(stream.size());
  for (const Event& e : stream.events()) {
    out.put<std::uint64_t>(static_cast<std::uint64_t>(e.t));
    out.put<std::uint16_t>(e.x);
    out.put<std::uint16_t>(e.y);
    out.put<std::uint8_t>(e.p);
  }
  return out.take();
}

EventStream read_event_file(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  return parse_events(bytes, detect_event_format(bytes));
}

void write_event_file(const std::filesystem::path& path, const EventStream& stream,
                      EventFormat format) {
  detail::write_file_atomic(path, serialize_events(stream, format));
}

namespace detail {

std::string read_file(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::exists(path, ec)) throw MissingFileError("no such file: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return std::move(ss).str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename to " + path.string() + " failed: " + ec.message());
}

}  // namespace detail

}  // namespace evact
