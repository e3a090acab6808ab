#pragma once

#include <string>
#include <string_view>

namespace hadpo::io {

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view data);

// UTC, ISO-8601 with seconds.
std::string utc_timestamp();

}  // namespace hadpo::io
