#include "evact/errors.hpp"
#include "evact/event_io.hpp"
#include "evact/preprocess.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <cstdlib>

using namespace evact;
using evact::testing::random_stream;
using evact::testing::TempDir;

namespace {

bool is_subsequence(std::span<const Event> sub, std::span<const Event> full) {
  std::size_t j = 0;
  for (const Event& e : full) {
    if (j < sub.size() && sub[j] == e) ++j;
  }
  return j == sub.size();
}

bool neighbours(const Event& a, const Event& b) {
  return std::abs(int{a.x} - int{b.x}) <= 1 && std::abs(int{a.y} - int{b.y}) <= 1;
}

// Quadratic restatement of the refractory rule over the retained list.
std::vector<Event> refractory_oracle(const EventStream& s, Micros dt) {
  std::vector<Event> kept;
  for (const Event& e : s.events()) {
    bool drop = false;
    for (const Event& k : kept) {
      if (neighbours(e, k) && k.t < e.t && k.t > e.t - dt) drop = true;
    }
    if (!drop) kept.push_back(e);
  }
  return kept;
}

// Quadratic restatement of the neighbour-support rule over all earlier events.
std::vector<Event> denoise_oracle(const EventStream& s, Micros tau, int k_min) {
  std::vector<Event> kept;
  const auto ev = s.events();
  for (std::size_t i = 0; i < ev.size(); ++i) {
    // Latest earlier event per neighbouring pixel decides support for that pixel.
    int support = 0;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        bool hit = false;
        for (std::size_t j = 0; j < i; ++j) {
          if (int{ev[j].x} == ev[i].x + dx && int{ev[j].y} == ev[i].y + dy && ev[j].t >= ev[i].t - tau &&
              ev[j].t <= ev[i].t) {
            hit = true;
          }
        }
        support += hit;
      }
    }
    if (support >= k_min) kept.push_back(ev[i]);
  }
  return kept;
}

}  // namespace

TEST_CASE("csv single record") {
  const EventStream s = parse_events("480 640\n10 3 4 1\n", EventFormat::kCsv);
  CHECK(s.geometry() == Geometry{480, 640});
  REQUIRE(s.size() == 1);
  CHECK(s.events()[0] == Event{10, 3, 4, 1});
}

TEST_CASE("csv out-of-order input is sorted") {
  const EventStream s = parse_events("4 4\n20 0 0 1\n10 1 1 0\n", EventFormat::kCsv);
  REQUIRE(s.size() == 2);
  CHECK(s.events()[0].t == 10);
  CHECK(s.events()[1].t == 20);
}

TEST_CASE("sort is stable for equal timestamps") {
  const EventStream s = parse_events("4 4\n5 3 0 1\n5 1 0 0\n5 2 0 1\n", EventFormat::kCsv);
  CHECK(s.events()[0].x == 3);
  CHECK(s.events()[1].x == 1);
  CHECK(s.events()[2].x == 2);
}

TEST_CASE("csv coordinate outside geometry") {
  CHECK_THROWS_AS(parse_events("480 640\n10 700 4 1\n", EventFormat::kCsv), ValidationError);
  try {
    parse_events("480 640\n1 1 1 1\n10 700 4 1\n", EventFormat::kCsv);
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("record 1") != std::string::npos);
  }
}

TEST_CASE("csv malformed line reports byte offset") {
  const std::string text = "4 4\n1 1 1 1\n2 x 1 0\n";
  try {
    parse_events(text, EventFormat::kCsv);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == text.find("2 x"));
  }
  CHECK_THROWS_AS(parse_events("4 4\n1 1 1\n", EventFormat::kCsv), ParseError);
  CHECK_THROWS_AS(parse_events("4 4\n1 1 1 2\n", EventFormat::kCsv), ValidationError);
  CHECK_THROWS_AS(parse_events("", EventFormat::kCsv), ParseError);
}

TEST_CASE("binary layout is as documented") {
  const EventStream s(Geometry{3, 5}, {Event{7, 4, 2, 1}});
  const std::string bytes = serialize_events(s, EventFormat::kBinary);
  REQUIRE(bytes.size() == 4 + 4 + 4 + 8 + 13);
  CHECK(bytes.substr(0, 4) == "EVS1");
  CHECK(static_cast<unsigned char>(bytes[4]) == 3);
  CHECK(static_cast<unsigned char>(bytes[8]) == 5);
  CHECK(static_cast<unsigned char>(bytes[12]) == 1);
  CHECK(static_cast<unsigned char>(bytes[20]) == 7);
  CHECK(static_cast<unsigned char>(bytes[28]) == 4);
  CHECK(static_cast<unsigned char>(bytes[30]) == 2);
  CHECK(static_cast<unsigned char>(bytes[32]) == 1);
  CHECK(detect_event_format(bytes) == EventFormat::kBinary);
  CHECK(detect_event_format("4 4\n") == EventFormat::kCsv);
}

TEST_CASE("binary truncated or padded payload is rejected") {
  const EventStream s(Geometry{3, 5}, {Event{7, 4, 2, 1}, Event{9, 1, 1, 0}});
  const std::string bytes = serialize_events(s, EventFormat::kBinary);
  CHECK_THROWS_AS(parse_events(bytes.substr(0, bytes.size() - 1), EventFormat::kBinary), ParseError);
  CHECK_THROWS_AS(parse_events(bytes + "x", EventFormat::kBinary), ParseError);
  CHECK_THROWS_AS(parse_events("EVS2" + bytes.substr(4), EventFormat::kBinary), ParseError);
}

TEST_CASE("parse-serialize-parse round trip on fuzzed streams") {
  detail::SplitMix rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const Geometry g{static_cast<std::uint32_t>(1 + rng.below(300)),
                     static_cast<std::uint32_t>(1 + rng.below(300))};
    const EventStream s = random_stream(rng, g, rng.below(500), 1 + static_cast<Micros>(rng.below(1'000'000)));
    for (EventFormat f : {EventFormat::kCsv, EventFormat::kBinary}) {
      const std::string a = serialize_events(s, f);
      const EventStream back = parse_events(a, f);
      CHECK(back == s);
      CHECK(serialize_events(back, f) == a);
    }
  }
}

TEST_CASE("event files round trip and missing files are reported") {
  TempDir dir("evio");
  detail::SplitMix rng(5);
  const EventStream s = random_stream(rng, Geometry{20, 30}, 200, 10'000);
  write_event_file(dir / "a.evs", s);
  write_event_file(dir / "a.csv", s, EventFormat::kCsv);
  CHECK(read_event_file(dir / "a.evs") == s);
  CHECK(read_event_file(dir / "a.csv") == s);
  CHECK_THROWS_AS(read_event_file(dir / "missing.evs"), MissingFileError);
}

TEST_CASE("stream constructor validates") {
  CHECK_THROWS_AS(EventStream(Geometry{2, 2}, {Event{0, 2, 0, 0}}), ValidationError);
  CHECK_THROWS_AS(EventStream(Geometry{2, 2}, {Event{-1, 0, 0, 0}}), ValidationError);
  CHECK_THROWS_AS(EventStream(Geometry{2, 2}, {Event{0, 0, 0, 2}}), ValidationError);
}

TEST_CASE("crop_roi examples") {
  const EventStream s(Geometry{20, 20}, {Event{1, 5, 5, 1}});
  SUBCASE("kept unchanged") {
    const EventStream c = crop_roi(s, RoiRect{0, 0, 10, 10});
    REQUIRE(c.size() == 1);
    CHECK(c.events()[0] == Event{1, 5, 5, 1});
  }
  SUBCASE("removed") { CHECK(crop_roi(s, RoiRect{6, 0, 10, 10}).empty()); }
  SUBCASE("shifted") {
    const EventStream c = crop_roi(EventStream(Geometry{20, 20}, {Event{1, 7, 3, 0}}), RoiRect{6, 2, 10, 10});
    REQUIRE(c.size() == 1);
    CHECK(c.events()[0] == Event{1, 1, 1, 0});
    CHECK(c.geometry() == Geometry{8, 4});
  }
  SUBCASE("invalid roi") {
    CHECK_THROWS_AS(crop_roi(s, RoiRect{5, 0, 5, 10}), ArgumentError);
    CHECK_THROWS_AS(crop_roi(s, RoiRect{0, 0, 21, 10}), ArgumentError);
  }
}

TEST_CASE("crop_roi conserves counts on fuzzed streams") {
  detail::SplitMix rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const EventStream s = random_stream(rng, Geometry{40, 50}, 1000, 100'000);
    const RoiRect roi{static_cast<std::uint32_t>(rng.below(25)), static_cast<std::uint32_t>(rng.below(20)),
                      static_cast<std::uint32_t>(25 + rng.below(26)),
                      static_cast<std::uint32_t>(20 + rng.below(21))};
    const EventStream c = crop_roi(s, roi);
    std::size_t inside = 0;
    for (const Event& e : s.events()) inside += e.x >= roi.x0 && e.x < roi.x1 && e.y >= roi.y0 && e.y < roi.y1;
    CHECK(c.size() == inside);
  }
}

TEST_CASE("refractory examples") {
  const Geometry g{10, 10};
  CHECK(refractory_filter(EventStream(g, {Event{0, 5, 5, 1}, Event{4000, 5, 5, 1}}), 5000).size() == 1);
  CHECK(refractory_filter(EventStream(g, {Event{0, 5, 5, 1}, Event{6000, 5, 5, 1}}), 5000).size() == 2);
  CHECK(refractory_filter(EventStream(g, {Event{0, 5, 5, 1}, Event{1000, 6, 6, 0}}), 5000).size() == 1);
  CHECK(refractory_filter(EventStream(g, {Event{0, 5, 5, 1}, Event{1000, 7, 7, 0}}), 5000).size() == 2);
  CHECK_THROWS_AS(refractory_filter(EventStream(g, {Event{0, 5, 5, 1}}), -1), ArgumentError);
}

TEST_CASE("refractory matches oracle, is a subsequence and idempotent") {
  detail::SplitMix rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const EventStream s = random_stream(rng, Geometry{6, 7}, 400, 200'000);
    const Micros dt = static_cast<Micros>(rng.below(20'000));
    const EventStream once = refractory_filter(s, dt);
    const auto oracle = refractory_oracle(s, dt);
    CHECK(std::vector<Event>(once.events().begin(), once.events().end()) == oracle);
    CHECK(is_subsequence(once.events(), s.events()));
    CHECK(refractory_filter(once, dt) == once);
  }
}

TEST_CASE("denoise examples") {
  const Geometry g{10, 10};
  const DenoiseParams p{10'000, 1};
  CHECK(time_surface_denoise(EventStream(g, {Event{0, 5, 5, 1}}), p).empty());
  const EventStream two(g, {Event{0, 4, 5, 0}, Event{1000, 5, 5, 1}});
  const EventStream kept = time_surface_denoise(two, p);
  REQUIRE(kept.size() == 1);
  CHECK(kept.events()[0] == Event{1000, 5, 5, 1});

  std::vector<Event> burst;
  for (std::uint16_t y = 0; y < 3; ++y)
    for (std::uint16_t x = 0; x < 3; ++x) burst.push_back(Event{static_cast<Micros>(100 * (3 * y + x)), x, y, 1});
  const EventStream b = time_surface_denoise(EventStream(g, burst), p);
  REQUIRE(b.size() == 8);
  CHECK(b.events()[0] == burst[1]);

  CHECK_THROWS_AS(time_surface_denoise(two, DenoiseParams{0, 1}), ArgumentError);
  CHECK_THROWS_AS(time_surface_denoise(two, DenoiseParams{10, 0}), ArgumentError);
}

TEST_CASE("denoise state is updated by dropped events") {
  // The first event is dropped but still supports the second.
  const Geometry g{10, 10};
  const EventStream s(g, {Event{0, 1, 1, 1}, Event{10, 2, 1, 1}});
  const EventStream d = time_surface_denoise(s, DenoiseParams{100, 1});
  REQUIRE(d.size() == 1);
  CHECK(d.events()[0].x == 2);
}

TEST_CASE("denoise matches oracle and is a subsequence") {
  detail::SplitMix rng(23);
  for (int trial = 0; trial < 25; ++trial) {
    const EventStream s = random_stream(rng, Geometry{5, 6}, 300, 100'000);
    const Micros tau = 1 + static_cast<Micros>(rng.below(20'000));
    const int k = 1 + static_cast<int>(rng.below(3));
    const EventStream d = time_surface_denoise(s, DenoiseParams{tau, k});
    CHECK(std::vector<Event>(d.events().begin(), d.events().end()) == denoise_oracle(s, tau, k));
    CHECK(is_subsequence(d.events(), s.events()));
  }
}
