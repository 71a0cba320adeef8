#pragma once

#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace islandsmc::io {

/// Shortest decimal representation that round-trips ('.' separator, locale free).
std::string format_double(double v);

/// RFC 4180 field quoting: fields containing ',', '"', CR or LF are quoted with
/// embedded quotes doubled.
std::string csv_field(std::string_view field);

/// Writes one CSV record terminated by CRLF.
void write_csv_row(std::ostream& os, const std::vector<std::string>& fields);

/// Splits one RFC 4180 record (no embedded newlines).
std::vector<std::string> parse_csv_row(std::string_view line);

/// Git blob object id: SHA-1 over "blob <len>\0<content>", lowercase hex.
std::string git_blob_hash(std::string_view content);

}  // namespace islandsmc::io
