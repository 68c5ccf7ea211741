#include "dncbm/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>
#include <zlib.h>

#include "dncbm/error.hpp"

namespace dncbm::io {

namespace {

constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f32(double v) {
    const float f = static_cast<float>(v);
    if (!std::isfinite(f)) throw Error(ErrorKind::NonFinite, "value does not fit in f32");
    u32(std::bit_cast<std::uint32_t>(f));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::size_t size() const { return out_.size(); }
  std::string take() { return std::move(out_); }
  const std::string& str() const { return out_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string_view what) : data_(data), what_(what) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f32() {
    const float f = std::bit_cast<float>(u32());
    if (!std::isfinite(f)) throw Error(ErrorKind::InvalidFile, fmt::format("{}: non-finite value", what_));
    return static_cast<double>(f);
  }
  double f64() { return std::bit_cast<double>(u64()); }

  void magic(std::string_view expected) {
    const std::string_view head = data_.substr(0, expected.size());
    if (head != expected.substr(0, head.size())) {
      throw Error(ErrorKind::BadMagic, fmt::format("{}: expected magic '{}'", what_, expected));
    }
    if (head.size() < expected.size()) {
      throw Error(ErrorKind::Truncated, fmt::format("{}: expected magic '{}'", what_, expected));
    }
    pos_ += expected.size();
  }
  void version() {
    const std::uint32_t v = u32();
    if (v != kVersion) {
      throw Error(ErrorKind::VersionMismatch, fmt::format("{}: version {} (expected {})", what_, v, kVersion));
    }
  }
  // Checks that `n` more bytes exist without consuming them.
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) {
      throw Error(ErrorKind::Truncated,
                  fmt::format("{}: truncated at byte {} (needed {} more, {} available)", what_, pos_, n,
                              data_.size() - pos_));
    }
  }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t pos() const { return pos_; }
  void finish() const {
    if (remaining() != 0) {
      throw Error(ErrorKind::TrailingBytes, fmt::format("{}: {} unexpected trailing bytes", what_, remaining()));
    }
  }

 private:
  std::uint64_t le(int n) {
    auto s = bytes(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(s[i])) << (8 * i);
    return v;
  }
  std::string_view data_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view s) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size()));
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) throw Error(ErrorKind::InvalidArgument, fmt::format("{} {} exceeds u32", what, v));
  return static_cast<std::uint32_t>(v);
}

Matrix read_matrix(Reader& r, std::size_t rows, std::size_t cols) {
  r.need(static_cast<std::uint64_t>(rows) * cols * 4);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = r.f32();
  return m;
}

void write_matrix(Writer& w, const Matrix& m) {
  for (double x : m.data()) w.f32(x);
}

}  // namespace

std::string encode_features(const FeatureFile& file) {
  Writer w;
  w.bytes("DNCB");
  w.u32(kVersion);
  w.u8(static_cast<std::uint8_t>(file.kind));
  w.u32(checked_u32(file.data.cols(), "feature width"));
  w.u64(file.data.rows());
  write_matrix(w, file.data);
  if (file.labels) {
    if (file.labels->size() != file.data.rows()) {
      throw Error(ErrorKind::DimensionMismatch,
                  fmt::format("{} labels for {} feature rows", file.labels->size(), file.data.rows()));
    }
    w.bytes("LBLS");
    for (std::size_t y : *file.labels) w.u32(checked_u32(y, "label"));
  }
  return w.take();
}

FeatureFile decode_features(std::string_view bytes) {
  Reader r(bytes, "feature file");
  r.magic("DNCB");
  r.version();
  FeatureFile f;
  const std::uint8_t kind = r.u8();
  if (kind > 2) throw Error(ErrorKind::InvalidFile, fmt::format("feature file: unknown kind {}", kind));
  f.kind = static_cast<FeatureKind>(kind);
  const std::uint32_t d = r.u32();
  const std::uint64_t n = r.u64();
  if (d != 0 && n > r.remaining() / (4ULL * d)) {
    throw Error(ErrorKind::Truncated, fmt::format("feature file: header declares {}x{} but payload is short", n, d));
  }
  f.data = read_matrix(r, static_cast<std::size_t>(n), d);
  if (r.remaining() > 0) {
    if (r.remaining() < 4 || r.bytes(4) != "LBLS") {
      throw Error(ErrorKind::TrailingBytes, "feature file: bytes after payload are not a label block");
    }
    r.need(n * 4);
    std::vector<std::size_t> labels(static_cast<std::size_t>(n));
    for (auto& y : labels) y = r.u32();
    f.labels = std::move(labels);
  }
  r.finish();
  return f;
}

std::string encode_vocabulary(const Vocabulary& vocab) {
  Writer w;
  w.bytes("DNCV");
  w.u32(kVersion);
  w.u32(checked_u32(vocab.size(), "vocabulary size"));
  w.u32(checked_u32(vocab.dim(), "embedding width"));
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const auto& word = vocab.word(i);
    if (word.size() > 0xffff) throw Error(ErrorKind::InvalidArgument, "vocabulary word longer than 65535 bytes");
    w.u16(static_cast<std::uint16_t>(word.size()));
    w.bytes(word);
    for (double x : vocab.embedding(i)) w.f32(x);
  }
  return w.take();
}

Vocabulary decode_vocabulary(std::string_view bytes) {
  Reader r(bytes, "vocabulary file");
  r.magic("DNCV");
  r.version();
  const std::uint32_t count = r.u32();
  const std::uint32_t d = r.u32();
  std::vector<std::string> words;
  Matrix emb(count, d);
  std::unordered_set<std::string> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    words.emplace_back(r.bytes(len));
    if (!seen.insert(words.back()).second) {
      throw Error(ErrorKind::InvalidFile, fmt::format("vocabulary file: duplicate word '{}'", words.back()));
    }
    r.need(4ULL * d);
    auto row = emb.row(i);
    for (double& x : row) x = r.f32();
    const double nrm = norm2(row);
    if (std::abs(nrm - 1.0) > 1e-4) {
      throw Error(ErrorKind::InvalidFile,
                  fmt::format("vocabulary file: embedding of '{}' has norm {} (expected 1 within 1e-4)", words.back(),
                              nrm));
    }
  }
  r.finish();
  return Vocabulary(std::move(words), std::move(emb));
}

std::string encode_checkpoint(const SaeModel& model) {
  Writer payload;
  write_matrix(payload, model.encoder);
  write_matrix(payload, model.decoder);
  Writer w;
  w.bytes("DNCK");
  w.u32(kVersion);
  w.u32(checked_u32(model.input_dim(), "d"));
  w.u32(checked_u32(model.latent_dim(), "h"));
  w.bytes(payload.str());
  w.u32(crc32_of(payload.str()));
  return w.take();
}

SaeModel decode_checkpoint(std::string_view bytes) {
  Reader r(bytes, "checkpoint");
  r.magic("DNCK");
  r.version();
  const std::uint32_t d = r.u32();
  const std::uint32_t h = r.u32();
  const std::uint64_t payload_bytes = 2ULL * d * h * 4;
  r.need(payload_bytes + 4);
  const std::size_t start = r.pos();
  Matrix enc = read_matrix(r, d, h);
  Matrix dec = read_matrix(r, h, d);
  const std::uint32_t expected = crc32_of(bytes.substr(start, payload_bytes));
  const std::uint32_t stored = r.u32();
  if (stored != expected) {
    throw Error(ErrorKind::ChecksumMismatch,
                fmt::format("checkpoint: CRC32 {:08x} does not match payload {:08x}", stored, expected));
  }
  r.finish();
  return SaeModel(std::move(enc), std::move(dec));
}

std::string encode_probe(const CbmProbe& probe) {
  if (probe.class_names.size() != probe.classes()) {
    throw Error(ErrorKind::DimensionMismatch, "probe class names do not match its class count");
  }
  Writer body;
  body.u32(kVersion);
  body.u32(checked_u32(probe.concepts(), "h"));
  body.u32(checked_u32(probe.classes(), "K"));
  body.f64(probe.lambda2);
  for (const auto& name : probe.class_names) {
    if (name.size() > 0xffff) throw Error(ErrorKind::InvalidArgument, "class name longer than 65535 bytes");
    body.u16(static_cast<std::uint16_t>(name.size()));
    body.bytes(name);
  }
  write_matrix(body, probe.weights);
  Writer w;
  w.bytes("DNCP");
  w.bytes(body.str());
  w.u32(crc32_of(body.str()));
  return w.take();
}

CbmProbe decode_probe(std::string_view bytes) {
  Reader r(bytes, "probe file");
  r.magic("DNCP");
  if (bytes.size() < 8) throw Error(ErrorKind::Truncated, "probe file: truncated");
  const std::uint32_t expected = crc32_of(bytes.substr(4, bytes.size() - 8));
  Reader tail(bytes.substr(bytes.size() - 4), "probe file");
  if (tail.u32() != expected) throw Error(ErrorKind::ChecksumMismatch, "probe file: CRC32 mismatch");
  r.version();
  const std::uint32_t h = r.u32();
  const std::uint32_t k = r.u32();
  CbmProbe probe;
  probe.lambda2 = r.f64();
  for (std::uint32_t i = 0; i < k; ++i) {
    const std::uint16_t len = r.u16();
    probe.class_names.emplace_back(r.bytes(len));
  }
  probe.weights = read_matrix(r, h, k);
  r.u32();
  r.finish();
  return probe;
}

Matrix quantize_f32(const Matrix& m) {
  Matrix out = m;
  for (double& x : out.data()) x = static_cast<double>(static_cast<float>(x));
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, fmt::format("cannot open '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, fmt::format("cannot write '{}'", tmp.string()));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorKind::Io, fmt::format("short write to '{}'", tmp.string()));
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorKind::Io, fmt::format("cannot move output into '{}'", path.string()));
  }
}

FeatureFile read_features(const std::filesystem::path& path) { return decode_features(read_file(path)); }
void write_features(const std::filesystem::path& path, const FeatureFile& file) {
  write_file_atomic(path, encode_features(file));
}
Vocabulary read_vocabulary(const std::filesystem::path& path) { return decode_vocabulary(read_file(path)); }
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab) {
  write_file_atomic(path, encode_vocabulary(vocab));
}
SaeModel read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }
void write_checkpoint(const std::filesystem::path& path, const SaeModel& model) {
  write_file_atomic(path, encode_checkpoint(model));
}
CbmProbe read_probe(const std::filesystem::path& path) { return decode_probe(read_file(path)); }
void write_probe(const std::filesystem::path& path, const CbmProbe& probe) {
  write_file_atomic(path, encode_probe(probe));
}

std::vector<std::size_t> parse_index_list(std::string_view text) {
  std::vector<std::size_t> out;
  std::size_t line = 1;
  for (std::size_t i = 0; i < text.size();) {
    const char ch = text[i];
    if (ch == '#') {
      while (i < text.size() && text[i] != '\n') ++i;
    } else if (ch == '\n') {
      ++line;
      ++i;
    } else if (ch == ' ' || ch == '\t' || ch == '\r' || ch == ',') {
      ++i;
    } else if (ch >= '0' && ch <= '9') {
      std::size_t v = 0;
      while (i < text.size() && text[i] >= '0' && text[i] <= '9') v = v * 10 + static_cast<std::size_t>(text[i++] - '0');
      out.push_back(v);
    } else {
      throw Error(ErrorKind::InvalidFile, fmt::format("index list: unexpected '{}' on line {}", ch, line));
    }
  }
  return out;
}

std::vector<std::size_t> read_index_file(const std::filesystem::path& path) {
  return parse_index_list(read_file(path));
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string names_csv(const NamedConceptSpace& space) {
  std::string out = "concept_index,name,alignment\n";
  for (std::size_t c = 0; c < space.size(); ++c) {
    out += fmt::format("{},{},{:.6f}\n", c, csv_field(space[c].name), space[c].alignment);
  }
  return out;
}

}  // namespace dncbm::io
