#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace drselect::text {

/// Lowercases ASCII letters and splits on anything that is not an ASCII
/// letter or digit. Bytes >= 0x80 are kept inside tokens so UTF-8 words
/// survive intact. No stemming, no stopwords.
std::vector<std::string> tokenize(std::string_view s);

/// Splits on runs of ASCII whitespace.
std::vector<std::string> split_ws(std::string_view s);

std::string_view trim(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// 64-bit FNV-1a. Stable across platforms; used to seed deterministic streams.
std::uint64_t fnv1a(std::string_view s, std::uint64_t basis = 14695981039346656037ULL);

}  // namespace drselect::text
