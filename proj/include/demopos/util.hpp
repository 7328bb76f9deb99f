#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace demopos {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed task files, fixture files, or config entries.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Transient gateway failure (connection refused, 5xx). Eligible for retry.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// Non-retryable gateway failure (auth, malformed reply, exhausted retries).
class GatewayError : public Error {
 public:
  using Error::Error;
};

/// A statistical test that is undefined on its input (e.g. all-zero differences).
class DegenerateSample : public Error {
 public:
  using Error::Error;
};

std::string sha256_hex(std::string_view data);
std::uint64_t fnv1a64(std::string_view data);

std::string lower_ascii(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with(std::string_view s, std::string_view prefix);

/// Fixed-point decimal formatting used by every report writer ("%.4f" unless
/// stated otherwise) so emitted bundles are byte-stable.
std::string format_fixed(double value, int decimals = 4);

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Writes to a temp file in the target directory, then renames into place.
/// Concurrent writers of the same path converge to one complete file.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

}  // namespace demopos
