#include "tokweight/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <ostream>
#include <stdexcept>
#include <string>

namespace tokweight {

namespace le {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

void put_f32(std::vector<std::uint8_t>& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

std::span<const std::uint8_t> Reader::take(std::size_t n) {
  if (bytes_.size() - pos_ < n) throw std::runtime_error("truncated binary record");
  auto s = bytes_.subspan(pos_, n);
  pos_ += n;
  return s;
}

std::uint32_t Reader::u32() {
  auto s = take(4);
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(s[k]) << (8 * k);
  return v;
}

std::uint64_t Reader::u64() {
  auto s = take(8);
  std::uint64_t v = 0;
  for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(s[k]) << (8 * k);
  return v;
}

float Reader::f32() { return std::bit_cast<float>(u32()); }
double Reader::f64() { return std::bit_cast<double>(u64()); }

void Reader::expect_magic(const char (&magic)[5]) {
  auto s = take(4);
  if (std::memcmp(s.data(), magic, 4) != 0) {
    throw std::runtime_error(std::string("bad magic, expected ") + magic);
  }
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace le

std::vector<std::uint8_t> checkpoint_bytes(const TinyLm& model) {
  const auto& c = model.config();
  std::vector<std::uint8_t> out{'T', 'L', 'M', '1'};
  for (int v : {c.layers, c.dim, c.heads, c.ff_dim, c.vocab, c.max_context}) {
    le::put_u32(out, static_cast<std::uint32_t>(v));
  }
  le::put_f64(out, c.rope_base);
  out.reserve(out.size() + 4 * model.param_count());
  for (float p : model.params()) le::put_f32(out, p);
  return out;
}

TinyLm parse_checkpoint(std::span<const std::uint8_t> bytes) {
  le::Reader r(bytes);
  r.expect_magic("TLM1");
  ModelConfig c;
  c.layers = static_cast<std::int32_t>(r.u32());
  c.dim = static_cast<std::int32_t>(r.u32());
  c.heads = static_cast<std::int32_t>(r.u32());
  c.ff_dim = static_cast<std::int32_t>(r.u32());
  c.vocab = static_cast<std::int32_t>(r.u32());
  c.max_context = static_cast<std::int32_t>(r.u32());
  c.rope_base = r.f64();
  TinyLm model(c);
  for (auto& p : model.params()) p = r.f32();
  if (!r.done()) throw std::runtime_error("trailing bytes after checkpoint parameters");
  return model;
}

void save_checkpoint(const TinyLm& model, const std::filesystem::path& path) {
  le::write_file(path, checkpoint_bytes(model));
}

TinyLm load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(le::read_file(path)); }

void write_trace(std::ostream& out, const LogProbTrace& trace) {
  std::vector<std::uint8_t> buf;
  le::put_u64(buf, trace.seq_id);
  le::put_u32(buf, static_cast<std::uint32_t>(trace.context_limit));
  le::put_u32(buf, static_cast<std::uint32_t>(trace.logp.size()));
  for (double v : trace.logp) le::put_f64(buf, v);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::vector<LogProbTrace> read_traces(std::istream& in) {
  const std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  le::Reader r(bytes);
  std::vector<LogProbTrace> out;
  while (!r.done()) {
    LogProbTrace t;
    t.seq_id = r.u64();
    t.context_limit = r.u32();
    t.logp.resize(r.u32());
    for (auto& v : t.logp) v = r.f64();
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace tokweight
