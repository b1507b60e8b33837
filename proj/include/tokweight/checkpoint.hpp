#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "tokweight/tinylm.hpp"

namespace tokweight {

/// Binary checkpoint: magic "TLM1", layers, dim, heads, ff_dim, vocab,
/// max_context as little-endian int32, rope_base as little-endian float64,
/// then every parameter tensor in declaration order as little-endian float32.
std::vector<std::uint8_t> checkpoint_bytes(const TinyLm& model);
TinyLm parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const TinyLm& model, const std::filesystem::path& path);
TinyLm load_checkpoint(const std::filesystem::path& path);

/// Trace record: seq_id (uint64), context_limit (uint32), length (uint32),
/// then `length` float64 log-probabilities, all little-endian.
void write_trace(std::ostream& out, const LogProbTrace& trace);
std::vector<LogProbTrace> read_traces(std::istream& in);

namespace le {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f32(std::vector<std::uint8_t>& out, float v);
void put_f64(std::vector<std::uint8_t>& out, double v);

/// Bounds-checked little-endian reader; throws std::runtime_error on truncation.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  void expect_magic(const char (&magic)[5]);
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> take(std::size_t n);
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace le

}  // namespace tokweight
