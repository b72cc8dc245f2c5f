#pragma once

// Binary n-gram model file. All integers little-endian.
//
//   "DIVSEQLM"                       8-byte magic
//   u16 version                      currently 1
//   u32 n_tokens                     vocab block, id order, reserved ids included
//     n_tokens x (u32 len, len bytes of UTF-8)
//   u32 order
//   f64 k                            IEEE-754 bits as u64
//   u64 n_contexts                   sorted by context id sequence
//     n_contexts x (u32 ctx_len, ctx_len x u32 id,
//                   u32 n_cont, n_cont x (u32 token, u64 count))
//   u32 crc32                        of every preceding byte
//
// Log probabilities are natural logs, rebuilt from the counts on load.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <zlib.h>

#include "divseq/ngram_lm.hpp"

namespace divseq {

inline constexpr std::string_view kLmMagic = "DIVSEQLM";
inline constexpr std::uint16_t kLmFormatVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string raw(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw Error(Errc::CorruptPayload, "model file truncated");
  }

  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_lm(const NGramLM& lm) {
  detail::ByteWriter w;
  w.raw(kLmMagic);
  w.u16(kLmFormatVersion);
  const auto& tokens = lm.vocab().tokens();
  w.u32(static_cast<std::uint32_t>(tokens.size()));
  for (const auto& t : tokens) {
    w.u32(static_cast<std::uint32_t>(t.size()));
    w.raw(t);
  }
  w.u32(static_cast<std::uint32_t>(lm.order()));
  w.f64(lm.add_k());

  std::uint64_t n_contexts = 0;
  lm.for_each_context([&](auto, auto) { ++n_contexts; });
  w.u64(n_contexts);
  lm.for_each_context([&](std::span<const TokenId> ctx,
                          std::span<const NGramLM::Continuation> conts) {
    w.u32(static_cast<std::uint32_t>(ctx.size()));
    for (TokenId id : ctx) w.u32(id);
    w.u32(static_cast<std::uint32_t>(conts.size()));
    for (const auto& c : conts) {
      w.u32(c.token);
      w.u64(c.count);
    }
  });
  w.u32(detail::crc32_of(w.bytes()));
  return std::move(w.bytes());
}

// `expected_vocab`, when given, must match the stored vocabulary exactly.
inline NGramLM deserialize_lm(std::span<const std::uint8_t> bytes,
                              const Vocab* expected_vocab = nullptr) {
  if (bytes.size() < kLmMagic.size() + 2 + 4) {
    throw Error(Errc::CorruptPayload, "model file truncated");
  }
  if (std::memcmp(bytes.data(), kLmMagic.data(), kLmMagic.size()) != 0) {
    throw Error(Errc::CorruptPayload, "bad magic");
  }
  detail::ByteReader header(bytes.subspan(kLmMagic.size(), 2));
  const auto version = header.u16();
  if (version != kLmFormatVersion) {
    throw Error(Errc::FormatVersionMismatch, "format version " + std::to_string(version) +
                                                 ", expected " +
                                                 std::to_string(kLmFormatVersion));
  }
  const auto body = bytes.first(bytes.size() - 4);
  detail::ByteReader crc_reader(bytes.last(4));
  if (crc_reader.u32() != detail::crc32_of(body)) {
    throw Error(Errc::CorruptPayload, "checksum mismatch");
  }

  detail::ByteReader r(body.subspan(kLmMagic.size() + 2));
  const auto n_tokens = r.u32();
  if (n_tokens > r.remaining() / 4) throw Error(Errc::CorruptPayload, "token count too large");
  std::vector<std::string> tokens;
  tokens.reserve(n_tokens);
  for (std::uint32_t i = 0; i < n_tokens; ++i) tokens.push_back(r.raw(r.u32()));
  Vocab vocab = [&] {
    try {
      return Vocab::from_id_order(tokens);
    } catch (const Error& e) {
      throw Error(Errc::CorruptPayload, e.what());
    }
  }();
  if (expected_vocab && !(*expected_vocab == vocab)) {
    throw Error(Errc::VocabMismatch, "model vocabulary differs from the expected one");
  }

  try {
    const auto order = r.u32();
    const double k = r.f64();
    NGramLM lm(std::move(vocab), order, k);
    const auto n_contexts = r.u64();
    std::vector<TokenId> ctx;
    for (std::uint64_t i = 0; i < n_contexts; ++i) {
      const auto len = r.u32();
      if (len > r.remaining() / 4) throw Error(Errc::CorruptPayload, "context length too large");
      ctx.resize(len);
      for (auto& id : ctx) id = r.u32();
      const auto n_cont = r.u32();
      for (std::uint32_t j = 0; j < n_cont; ++j) {
        const auto token = r.u32();
        lm.add_count(ctx, token, r.u64());
      }
    }
    if (r.remaining() != 0) throw Error(Errc::CorruptPayload, "trailing bytes");
    lm.finalize();
    return lm;
  } catch (const Error& e) {
    if (e.code() == Errc::CorruptPayload) throw;
    throw Error(Errc::CorruptPayload, e.what());
  }
}

inline void save_lm(const NGramLM& lm, const std::string& path) {
  const auto bytes = serialize_lm(lm);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::Io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::Io, "write to '" + path + "' failed");
}

inline NGramLM load_lm(const std::string& path, const Vocab* expected_vocab = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_lm(bytes, expected_vocab);
}

}  // namespace divseq
