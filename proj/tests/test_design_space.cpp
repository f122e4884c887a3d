#include <doctest.h>

#include <set>

#include "qorseek/common.hpp"
#include "qorseek/design_space.hpp"
#include "support.hpp"

using namespace qorseek;
using qorseek::testing::kernel_from;

namespace {

constexpr const char* kOneLoop = R"(kernel tiny
hazard=0
array x words=16 bits=32
loop i trip=8 add=1 mul=0 arrays=x
)";

std::int64_t count_pragma_lines(const std::string& text) {
  std::int64_t n = 0;
  std::size_t pos = 0;
  while ((pos = text.find("#pragma HLS", pos)) != std::string::npos) {
    ++n;
    ++pos;
  }
  return n;
}

}  // namespace

TEST_CASE("minimal descriptor parses to one loop and one array") {
  const auto k = parse_kernel_descriptor(kOneLoop);
  CHECK(k.name == "tiny");
  REQUIRE(k.loops.size() == 1);
  REQUIRE(k.arrays.size() == 1);
  CHECK(k.loops[0].trip_count == 8);
  CHECK(k.arrays[0].num_words == 16);
}

TEST_CASE("loop touching an undeclared array is rejected") {
  CHECK_THROWS_AS(parse_kernel_descriptor("kernel k\nloop i trip=4 add=1 mul=0 arrays=nope\n"), ValidationError);
}

TEST_CASE("syntax errors carry the line number") {
  try {
    parse_kernel_descriptor("kernel k\nbogus line here\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
}

TEST_CASE("nested loops round-trip through the serializer") {
  const auto k = parse_kernel_descriptor(
      "kernel nest\narray a words=32 bits=32\nloop o trip=4 add=0 mul=0 arrays=\nloop i trip=8 parent=o add=1 mul=1 arrays=a\n");
  REQUIRE(k.loops.size() == 2);
  CHECK(k.loops[1].parent == std::optional<std::string>("o"));
  CHECK(parse_kernel_descriptor(serialize_kernel_descriptor(k)) == k);
}

TEST_CASE("space size follows the counting rule") {
  // Unroll: powers of two up to trip (plus trip itself when not a power of two).
  // Pipeline: off or II in {1, 2, 4}. Partition: none, cyclic/block for each
  // power-of-two divisor strictly between 1 and words, complete.
  auto count = [](const KernelDescriptor& k) {
    std::uint64_t n = 1;
    for (const auto& l : k.loops) {
      std::uint64_t u = 0;
      for (std::int64_t f = 1; f <= l.trip_count; ++f)
        if ((f & (f - 1)) == 0) ++u;
      if ((l.trip_count & (l.trip_count - 1)) != 0) ++u;
      n *= u * 4;
    }
    for (const auto& a : k.arrays) {
      std::uint64_t p = 2;
      for (std::int64_t f = 2; f < a.num_words; ++f)
        if ((f & (f - 1)) == 0 && a.num_words % f == 0) p += 2;
      n *= p;
    }
    return n;
  };
  const auto small = parse_kernel_descriptor("kernel s\narray x words=4 bits=32\nloop i trip=4 add=1 mul=0 arrays=x\n");
  // 3 unroll x 4 pipeline x (none, cyclic2, block2, complete)
  CHECK(DesignSpace(small).size() == 48);
  CHECK(count(small) == 48);
  CHECK(enumerate_space(small).size() == 48);

  const auto vadd = qorseek::testing::demo_kernel("vadd");
  CHECK(DesignSpace(*vadd).size() == 512);
  CHECK(count(*vadd) == 512);
  for (const char* name : {"gemm", "fir_filter", "stencil2d", "conv1d"}) {
    const auto k = qorseek::testing::demo_kernel(name);
    CHECK(DesignSpace(*k).size() == count(*k));
  }
}

TEST_CASE("unit trip counts leave only pipeline and partition choices") {
  const auto k = parse_kernel_descriptor("kernel u\narray x words=8 bits=32\nloop i trip=1 add=1 mul=0 arrays=x\n");
  // pipeline 4 x partition (none, cyclic 2/4, block 2/4, complete)
  CHECK(enumerate_space(k).size() == 4 * 6);
}

TEST_CASE("enumeration is stable, legal and unique") {
  const auto k = parse_kernel_descriptor(kOneLoop);
  const auto a = enumerate_space(k);
  const auto b = enumerate_space(k);
  CHECK(a == b);
  CHECK(a.front() == DesignSpace(k).config_at(0));
  std::set<std::string> keys;
  for (const auto& c : a) {
    CHECK(is_legal_config(k, c));
    keys.insert(config_key(c));
  }
  CHECK(keys.size() == a.size());
}

TEST_CASE("space cap raises an overflow error") {
  const auto k = parse_kernel_descriptor(kOneLoop);
  CHECK_THROWS_AS(enumerate_space(k, 10), SpaceOverflowError);
}

TEST_CASE("index and config conversions are inverse") {
  const auto k = qorseek::testing::demo_kernel("gemm");
  const DesignSpace space(*k);
  for (std::uint64_t i = 0; i < space.size(); i += 97) CHECK(space.index_of(space.config_at(i)) == i);
}

TEST_CASE("sampling is seeded, legal and uniform per dimension") {
  const auto k = parse_kernel_descriptor(kOneLoop);
  CHECK(sample_config(k, 42) == sample_config(k, 42));
  std::size_t off = 0;
  constexpr std::size_t n = 10'000;
  for (std::size_t s = 0; s < n; ++s) {
    const auto c = sample_config(k, s);
    CHECK(is_legal_config(k, c));
    if (!c.loops[0].pipeline) ++off;
  }
  // Off is one of four pipeline choices: 0.25 +- 0.03 is a > 5 sigma binomial band.
  const double frac = static_cast<double>(off) / n;
  CHECK(frac >= 0.22);
  CHECK(frac <= 0.28);
}

TEST_CASE("rendering") {
  auto k = kernel_from(kOneLoop);
  PragmaConfig plain;
  plain.loops.resize(1);
  plain.arrays.resize(1);
  const auto d0 = render_design(k, plain);
  CHECK(count_pragma_lines(d0.rendered_code) == 0);

  PragmaConfig c = plain;
  c.loops[0].unroll_factor = 4;
  c.loops[0].pipeline = true;
  c.loops[0].ii = 2;
  c.arrays[0] = {PartitionKind::cyclic, 4};
  const auto d1 = render_design(k, c);
  CHECK(d1.rendered_code.find("#pragma HLS UNROLL factor=4") != std::string::npos);
  CHECK(d1.rendered_code.find("#pragma HLS PIPELINE II=2") != std::string::npos);
  CHECK(d1.rendered_code.find("#pragma HLS ARRAY_PARTITION variable=x cyclic factor=4") != std::string::npos);
  CHECK(render_design(k, c).rendered_code == d1.rendered_code);

  PragmaConfig bad = plain;
  bad.loops[0].unroll_factor = 3;
  CHECK_THROWS_AS(render_design(k, bad), ValidationError);
}

TEST_CASE("rendering is injective over the space") {
  auto k = kernel_from(kOneLoop);
  std::set<std::string> texts;
  const auto all = enumerate_space(*k);
  for (const auto& c : all) texts.insert(render_design(k, c).rendered_code);
  CHECK(texts.size() == all.size());
}
