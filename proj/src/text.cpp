#include "srcattr/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/uscript.h>
#include <unicode/utf8.h>

#include <cstdio>
#include <stdexcept>

namespace srcattr::text {
namespace {

const icu::Normalizer2& nfc_instance() {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* n = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status) || n == nullptr) {
    throw std::runtime_error("ICU NFC normalizer unavailable");
  }
  return *n;
}

void append_utf8(std::string& out, char32_t cp) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  UBool err = false;
  U8_APPEND(reinterpret_cast<uint8_t*>(buf), len, U8_MAX_LENGTH, static_cast<UChar32>(cp), err);
  if (err) throw std::invalid_argument("cannot encode code point as UTF-8");
  out.append(buf, static_cast<std::size_t>(len));
}

template <typename F>
void for_each_cp(std::string_view s, F&& f) {
  const auto* p = reinterpret_cast<const uint8_t*>(s.data());
  const auto n = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < n) {
    UChar32 c;
    U8_NEXT(p, i, n, c);
    if (c < 0) throw std::invalid_argument("invalid UTF-8 sequence");
    f(static_cast<char32_t>(c));
  }
}

}  // namespace

std::string nfc(std::string_view utf8) {
  // Validate first so malformed bytes are reported rather than replaced.
  for_each_cp(utf8, [](char32_t) {});
  const auto& norm = nfc_instance();
  UErrorCode status = U_ZERO_ERROR;
  if (norm.isNormalizedUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())),
                            status) &&
      U_SUCCESS(status)) {
    return std::string(utf8);
  }
  status = U_ZERO_ERROR;
  std::string out;
  icu::StringByteSink<std::string> sink(&out);
  norm.normalizeUTF8(0, icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())), sink,
                     nullptr, status);
  if (U_FAILURE(status)) throw std::invalid_argument("NFC normalization failed");
  return out;
}

std::vector<std::string> whitespace_tokens(std::string_view utf8) {
  std::vector<std::string> tokens;
  std::string cur;
  for_each_cp(nfc(utf8), [&](char32_t c) {
    if (u_isUWhiteSpace(static_cast<UChar32>(c))) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      append_utf8(cur, c);
    }
  });
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

std::string fold_latin(std::string_view utf8) {
  std::string out;
  out.reserve(utf8.size());
  for_each_cp(utf8, [&](char32_t c) {
    UErrorCode status = U_ZERO_ERROR;
    const auto script = uscript_getScript(static_cast<UChar32>(c), &status);
    if (U_SUCCESS(status) && script == USCRIPT_LATIN) {
      c = static_cast<char32_t>(u_foldCase(static_cast<UChar32>(c), U_FOLD_CASE_DEFAULT));
    }
    append_utf8(out, c);
  });
  return out;
}

std::vector<std::string> analyze(std::string_view utf8) {
  auto tokens = whitespace_tokens(utf8);
  for (auto& t : tokens) t = fold_latin(t);
  return tokens;
}

std::string match_key(std::string_view utf8) {
  const auto tokens = whitespace_tokens(utf8);
  std::string joined = join(tokens);
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(
      icu::StringPiece(joined.data(), static_cast<int32_t>(joined.size())));
  u.foldCase(U_FOLD_CASE_DEFAULT);
  std::string folded;
  u.toUTF8String(folded);
  return nfc(folded);
}

std::vector<char32_t> code_points(std::string_view utf8) {
  std::vector<char32_t> cps;
  for_each_cp(nfc(utf8), [&](char32_t c) { cps.push_back(c); });
  return cps;
}

std::string encode_utf8(const std::vector<char32_t>& cps, std::size_t begin, std::size_t end) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) append_utf8(out, cps[i]);
  return out;
}

std::string join(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end,
                 std::string_view sep) {
  std::string out;
  for (std::size_t i = begin; i < end; ++i) {
    if (i > begin) out.append(sep);
    out.append(tokens[i]);
  }
  return out;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace srcattr::text
