// Line-oriented "key = value" document parser used by the config, environment,
// power-model, and layout file formats.
#pragma once

#include "wattscope/types.hpp"

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace wattscope {

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace detail

/// Parsed key-value document. '#' starts a comment, blank lines are skipped,
/// repeated keys are kept in order.
class kv_document {
public:
    static kv_document parse_string(std::string_view text, std::string origin = "<string>") {
        kv_document doc;
        doc.origin_ = std::move(origin);
        std::size_t line_no = 0;
        std::size_t pos = 0;
        while (pos <= text.size()) {
            const std::size_t eol = text.find('\n', pos);
            std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
            pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string_view::npos)
                line = line.substr(0, hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string_view::npos)
                throw parse_error(doc.origin_ + ":" + std::to_string(line_no) +
                                  ": expected 'key = value'");
            const auto key = detail::trim(line.substr(0, eq));
            const auto value = detail::trim(line.substr(eq + 1));
            if (key.empty())
                throw parse_error(doc.origin_ + ":" + std::to_string(line_no) + ": empty key");
            doc.entries_.emplace_back(std::string(key), std::string(value));
        }
        return doc;
    }

    static kv_document parse_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw error("cannot open file: " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        return parse_string(buf.str(), path.string());
    }

    const std::string& origin() const { return origin_; }

    bool has(std::string_view key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return true;
        return false;
    }

    std::optional<std::string> get(std::string_view key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return v;
        return std::nullopt;
    }

    const std::string& require(std::string_view key) const {
        for (const auto& [k, v] : entries_)
            if (k == key) return v;
        throw parse_error(origin_ + ": missing required field '" + std::string(key) + "'");
    }

    std::vector<std::string> all(std::string_view key) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : entries_)
            if (k == key) out.push_back(v);
        return out;
    }

    /// Entries whose key starts with `prefix`, with the prefix stripped.
    std::vector<std::pair<std::string, std::string>> with_prefix(std::string_view prefix) const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& [k, v] : entries_)
            if (k.size() > prefix.size() && std::string_view(k).substr(0, prefix.size()) == prefix)
                out.emplace_back(k.substr(prefix.size()), v);
        return out;
    }

    double require_number(std::string_view key) const { return to_number(key, require(key)); }

    std::optional<double> get_number(std::string_view key) const {
        if (auto v = get(key)) return to_number(key, *v);
        return std::nullopt;
    }

    std::int64_t require_integer(std::string_view key) const { return to_integer(key, require(key)); }

    std::optional<std::int64_t> get_integer(std::string_view key) const {
        if (auto v = get(key)) return to_integer(key, *v);
        return std::nullopt;
    }

    bool get_bool(std::string_view key, bool fallback) const {
        auto v = get(key);
        if (!v) return fallback;
        if (*v == "true" || *v == "1" || *v == "yes") return true;
        if (*v == "false" || *v == "0" || *v == "no") return false;
        throw parse_error(origin_ + ": field '" + std::string(key) + "' is not a boolean: '" + *v + "'");
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    double to_number(std::string_view key, const std::string& v) const {
        double out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size())
            throw parse_error(origin_ + ": field '" + std::string(key) + "' is not a number: '" + v + "'");
        return out;
    }

    std::int64_t to_integer(std::string_view key, const std::string& v) const {
        std::int64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
        if (ec != std::errc() || ptr != v.data() + v.size())
            throw parse_error(origin_ + ": field '" + std::string(key) + "' is not an integer: '" + v + "'");
        return out;
    }

    std::vector<std::pair<std::string, std::string>> entries_;
    std::string origin_;
};

/// Splits a command string into argv tokens. Handles single/double quotes and
/// backslash escapes outside single quotes; no variable expansion.
inline std::vector<std::string> split_command_line(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    bool in_token = false;
    char quote = '\0';
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (quote == '\'') {
            if (c == '\'') quote = '\0';
            else current.push_back(c);
            continue;
        }
        if (c == '\\' && i + 1 < text.size() && quote != '\'') {
            current.push_back(text[++i]);
            in_token = true;
            continue;
        }
        if (quote == '"') {
            if (c == '"') quote = '\0';
            else current.push_back(c);
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            in_token = true;
            continue;
        }
        if (c == ' ' || c == '\t') {
            if (in_token) {
                tokens.push_back(std::move(current));
                current.clear();
                in_token = false;
            }
            continue;
        }
        current.push_back(c);
        in_token = true;
    }
    if (quote != '\0') throw parse_error("unterminated quote in command line");
    if (in_token) tokens.push_back(std::move(current));
    return tokens;
}

/// Splits "a, b, c" into trimmed tokens, dropping empties.
inline std::vector<std::string> split_list(std::string_view text) {
    std::vector<std::string> tokens;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find(',', start);
        if (end == std::string_view::npos) end = text.size();
        std::string_view token = text.substr(start, end - start);
        while (!token.empty() && (token.front() == ' ' || token.front() == '\t'))
            token.remove_prefix(1);
        while (!token.empty() && (token.back() == ' ' || token.back() == '\t'))
            token.remove_suffix(1);
        if (!token.empty()) tokens.emplace_back(token);
        start = end + 1;
    }
    return tokens;
}

/// Inverse of split_command_line, good enough for round-tripping stored commands.
inline std::string join_command_line(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) out.push_back(' ');
        const bool needs_quotes = t.empty() || t.find_first_of(" \t'\"\\#") != std::string::npos;
        if (!needs_quotes) {
            out += t;
            continue;
        }
        out.push_back('"');
        for (char c : t) {
            if (c == '"' || c == '\\') out.push_back('\\');
            out.push_back(c);
        }
        out.push_back('"');
    }
    return out;
}

}  // namespace wattscope
