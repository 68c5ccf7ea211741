#include <doctest.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dncbm/error.hpp"
#include "dncbm/io.hpp"

using namespace dncbm;
namespace fs = std::filesystem;

namespace {

// Byte-level builder mirroring what an external exporter would write.
struct Bytes {
  std::string s;
  Bytes& raw(std::string_view v) {
    s += v;
    return *this;
  }
  Bytes& le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) s += static_cast<char>((v >> (8 * i)) & 0xff);
    return *this;
  }
  Bytes& u8(std::uint8_t v) { return le(v, 1); }
  Bytes& u16(std::uint16_t v) { return le(v, 2); }
  Bytes& u32(std::uint32_t v) { return le(v, 4); }
  Bytes& u64(std::uint64_t v) { return le(v, 8); }
  Bytes& f32(float v) { return u32(std::bit_cast<std::uint32_t>(v)); }
};

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dncbm_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

Matrix quantized(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(RngSeed{seed});
  Matrix m(r, c);
  for (double& x : m.data()) x = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("minimal feature file") {
  const auto bytes = Bytes{}.raw("DNCB").u32(1).u8(0).u32(1).u64(1).f32(0.5f).s;
  const auto f = io::decode_features(bytes);
  CHECK(f.kind == io::FeatureKind::Image);
  CHECK(f.data == Matrix{{0.5}});
  CHECK(!f.labels);
  CHECK(io::encode_features(f) == bytes);
}

TEST_CASE("exporter-style files load") {
  SUBCASE("empty image listing") {
    const auto f = io::decode_features(Bytes{}.raw("DNCB").u32(1).u8(0).u32(1024).u64(0).s);
    CHECK(f.data.rows() == 0);
    CHECK(f.data.cols() == 1024);
  }
  SUBCASE("labels block") {
    const auto bytes =
        Bytes{}.raw("DNCB").u32(1).u8(1).u32(2).u64(2).f32(1).f32(2).f32(3).f32(4).raw("LBLS").u32(7).u32(0).s;
    const auto f = io::decode_features(bytes);
    CHECK(f.kind == io::FeatureKind::Text);
    CHECK(f.data == Matrix{{1, 2}, {3, 4}});
    CHECK(*f.labels == std::vector<std::size_t>{7, 0});
    CHECK(io::encode_features(f) == bytes);
  }
  SUBCASE("one-word vocabulary") {
    const auto bytes = Bytes{}.raw("DNCV").u32(1).u32(1).u32(2).u16(3).raw("cat").f32(0.6f).f32(0.8f).s;
    const auto v = io::decode_vocabulary(bytes);
    CHECK(v.size() == 1);
    CHECK(v.word(0) == "cat");
    CHECK(v.embedding(0)[0] == doctest::Approx(0.6).epsilon(1e-7));
  }
}

TEST_CASE("feature file errors are distinct") {
  const auto good = Bytes{}.raw("DNCB").u32(1).u8(0).u32(2).u64(1).f32(1).f32(2).s;
  CHECK(kind_of([&] { io::decode_features("XXXX" + good.substr(4)); }) == ErrorKind::BadMagic);
  CHECK(kind_of([&] { io::decode_features(Bytes{}.raw("DNCB").u32(2).u8(0).u32(2).u64(1).f32(1).f32(2).s); }) ==
        ErrorKind::VersionMismatch);
  CHECK(kind_of([&] { io::decode_features(good.substr(0, good.size() - 1)); }) == ErrorKind::Truncated);
  CHECK(kind_of([&] { io::decode_features(good.substr(0, 10)); }) == ErrorKind::Truncated);
  CHECK(kind_of([&] { io::decode_features(good + "x"); }) == ErrorKind::TrailingBytes);
  CHECK(kind_of([&] { io::decode_features(good + "LBLS"); }) == ErrorKind::Truncated);
  CHECK(kind_of([&] { io::decode_features(Bytes{}.raw(good).raw("LBLS").u32(1).u8(0).s); }) ==
        ErrorKind::TrailingBytes);
  CHECK(kind_of([&] { io::decode_features(Bytes{}.raw("DNCB").u32(1).u8(9).u32(1).u64(1).f32(1).s); }) ==
        ErrorKind::InvalidFile);
  CHECK(kind_of([&] { io::decode_features(Bytes{}.raw("DNCB").u32(1).u8(0).u32(1).u64(1).f32(NAN).s); }) ==
        ErrorKind::InvalidFile);
  CHECK(kind_of([&] { io::decode_features(""); }) == ErrorKind::Truncated);
}

TEST_CASE("feature round trip is exact at f32") {
  io::FeatureFile f{io::FeatureKind::Activations, quantized(7, 5, 1), std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6}};
  const fs::path p = scratch("features.bin");
  io::write_features(p, f);
  const auto g = io::read_features(p);
  CHECK(g.kind == f.kind);
  CHECK(g.data == f.data);
  CHECK(g.labels == f.labels);
  CHECK(!fs::exists(p.string() + ".tmp"));

  Matrix wide{{0.1, 1e-3}};
  CHECK(io::decode_features(io::encode_features({io::FeatureKind::Image, wide, {}})).data == io::quantize_f32(wide));
  CHECK(kind_of([] { io::encode_features({io::FeatureKind::Image, Matrix{{1e300}}, {}}); }) == ErrorKind::NonFinite);
}

TEST_CASE("vocabulary round trip and validation") {
  const Vocabulary v({"red", "dög", "a,b"}, Matrix{{1, 0, 0}, {0, 0.6, 0.8}, {0, 1, 0}});
  const auto w = io::decode_vocabulary(io::encode_vocabulary(v));
  CHECK(w.words() == v.words());
  CHECK(io::encode_vocabulary(w) == io::encode_vocabulary(v));
  CHECK(kind_of([] {
          io::decode_vocabulary(Bytes{}.raw("DNCV").u32(1).u32(1).u32(2).u16(1).raw("x").f32(1).f32(1).s);
        }) == ErrorKind::InvalidFile);
  CHECK(kind_of([] {
          io::decode_vocabulary(
              Bytes{}.raw("DNCV").u32(1).u32(2).u32(1).u16(1).raw("x").f32(1).u16(1).raw("x").f32(1).s);
        }) == ErrorKind::InvalidFile);
  CHECK(kind_of([] { io::decode_vocabulary(Bytes{}.raw("DNCV").u32(1).u32(2).u32(1).u16(1).raw("x").f32(1).s); }) ==
        ErrorKind::Truncated);
}

TEST_CASE("checkpoint round trip and CRC") {
  const SaeModel m(quantized(3, 6, 2), quantized(6, 3, 3));
  const std::string bytes = io::encode_checkpoint(m);
  CHECK(bytes.size() == 16 + 2 * 18 * 4 + 4);
  CHECK(io::decode_checkpoint(bytes) == m);
  const fs::path p = scratch("model.ckpt");
  io::write_checkpoint(p, m);
  CHECK(io::read_checkpoint(p) == m);

  std::string flipped = bytes;
  flipped[20] ^= 0x01;
  CHECK(kind_of([&] { io::decode_checkpoint(flipped); }) == ErrorKind::ChecksumMismatch);
  CHECK(kind_of([&] { io::decode_checkpoint(bytes.substr(0, bytes.size() - 2)); }) == ErrorKind::Truncated);
  CHECK(kind_of([&] { io::decode_checkpoint(bytes + std::string(1, '\0')); }) == ErrorKind::TrailingBytes);
  CHECK(kind_of([&] { io::decode_checkpoint("DNCB" + bytes.substr(4)); }) == ErrorKind::BadMagic);
}

TEST_CASE("probe round trip and CRC") {
  CbmProbe p{quantized(4, 3, 4), {"cat", "dog", "bird"}, 0.25};
  const std::string bytes = io::encode_probe(p);
  const CbmProbe q = io::decode_probe(bytes);
  CHECK(q.weights == p.weights);
  CHECK(q.class_names == p.class_names);
  CHECK(q.lambda2 == 0.25);
  std::string flipped = bytes;
  flipped[10] ^= 0x40;
  CHECK(kind_of([&] { io::decode_probe(flipped); }) == ErrorKind::ChecksumMismatch);
  // The CRC covers the whole body, so a cut inside it reads as corruption.
  CHECK(kind_of([&] { io::decode_probe(bytes.substr(0, 30)); }) == ErrorKind::ChecksumMismatch);
  CHECK(kind_of([&] { io::decode_probe(bytes.substr(0, 6)); }) == ErrorKind::Truncated);
}

TEST_CASE("missing files and failed writes") {
  CHECK(kind_of([] { io::read_features(scratch("does-not-exist.bin")); }) == ErrorKind::Io);
  CHECK(kind_of([] { io::write_file_atomic(scratch("no-such-dir") / "x" / "y.bin", "z"); }) == ErrorKind::Io);
}

TEST_CASE("index lists and CSV helpers") {
  CHECK(io::parse_index_list("3, 1\n# comment 99\n4\t5\n") == std::vector<std::size_t>{3, 1, 4, 5});
  CHECK(io::parse_index_list("") .empty());
  CHECK(kind_of([] { io::parse_index_list("1 -2"); }) == ErrorKind::InvalidFile);
  CHECK(io::csv_field("plain") == "plain");
  CHECK(io::csv_field("a,b") == "\"a,b\"");
  CHECK(io::csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");

  NamedConceptSpace s;
  s.concepts = {{"red", 0, 0.99388373467361, {}}, {"dog", 1, 1.0, {}}};
  CHECK(io::names_csv(s) == "concept_index,name,alignment\n0,red,0.993884\n1,dog,1.000000\n");
}
