#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace srcattr::text {

/// Unicode NFC normalization of UTF-8 input. Invalid UTF-8 throws std::invalid_argument.
std::string nfc(std::string_view utf8);

/// Splits on Unicode whitespace after NFC normalization. Tokens are maximal
/// non-whitespace runs.
std::vector<std::string> whitespace_tokens(std::string_view utf8);

/// Simple case folding applied only to Latin-script code points.
std::string fold_latin(std::string_view utf8);

/// Index-side analysis: NFC, whitespace split, Latin case folding.
std::vector<std::string> analyze(std::string_view utf8);

/// Matching key: NFC, full case fold, whitespace collapsed to single spaces, trimmed.
std::string match_key(std::string_view utf8);

/// Decodes UTF-8 into code points (after NFC).
std::vector<char32_t> code_points(std::string_view utf8);

std::string encode_utf8(const std::vector<char32_t>& cps, std::size_t begin, std::size_t end);

std::string join(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end,
                 std::string_view sep = " ");

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  return join(tokens, 0, tokens.size(), sep);
}

/// 64-bit FNV-1a. Stable across platforms; used for feature hashing, splits and data hashes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t v);

}  // namespace srcattr::text
