#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace r2ag::text {

struct Token {
    std::string text;   // lowercase
    std::size_t begin;  // byte offsets into the source string
    std::size_t end;
};

inline bool is_token_byte(unsigned char c) noexcept
{
    // Bytes >= 0x80 belong to UTF-8 sequences and are kept inside tokens.
    return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
}

inline char ascii_lower(char c) noexcept
{
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

/// Splits on every non-alphanumeric ASCII byte and lowercases.
inline std::vector<Token> tokenize(std::string_view s)
{
    std::vector<Token> out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (!is_token_byte(static_cast<unsigned char>(s[i]))) {
            ++i;
            continue;
        }
        const std::size_t start = i;
        std::string word;
        while (i < s.size() && is_token_byte(static_cast<unsigned char>(s[i]))) {
            word.push_back(ascii_lower(s[i]));
            ++i;
        }
        out.push_back({std::move(word), start, i});
    }
    return out;
}

inline std::vector<std::string> words(std::string_view s)
{
    std::vector<std::string> out;
    for (auto& t : tokenize(s)) {
        out.push_back(std::move(t.text));
    }
    return out;
}

/// Lowercase, punctuation stripped, whitespace collapsed to single spaces.
inline std::string normalize(std::string_view s)
{
    std::string out;
    for (const auto& t : tokenize(s)) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += t.text;
    }
    return out;
}

inline std::vector<std::string_view> split(std::string_view s, char sep)
{
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.push_back(s.substr(start));
            return parts;
        }
        parts.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string_view trim(std::string_view s)
{
    const auto ws = " \t\r\n";
    const std::size_t b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) {
        return {};
    }
    const std::size_t e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

}  // namespace r2ag::text
