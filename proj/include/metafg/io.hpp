#ifndef METAFG_IO_HPP
#define METAFG_IO_HPP

// Shared helpers for the plain-text-header + raw-binary file formats.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace metafg::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

/// Raised for malformed, truncated or unreadable files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const std::filesystem::path& path);
std::ifstream open_in(const std::filesystem::path& path);

template <typename T>
void write_raw(std::ostream& os, std::span<const T> values) {
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
}

template <typename T>
void read_raw(std::istream& is, std::span<T> out, const std::string& what) {
  is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
  if (static_cast<std::size_t>(is.gcount()) != out.size_bytes())
    throw FormatError("truncated " + what + ": expected " + std::to_string(out.size_bytes()) + " bytes, read " +
                      std::to_string(is.gcount()));
}

/// Next header line; throws FormatError at end of file.
std::string header_line(std::istream& is, const std::string& what);
/// Reads "<key> <value...>" and returns the value text.
std::string expect_key(std::istream& is, const std::string& key, const std::string& what);
std::size_t parse_size(const std::string& text, const std::string& what);

/// Index list: one decimal index per line.
void write_index_list(const std::filesystem::path& path, std::span<const std::size_t> indices);
std::vector<std::size_t> read_index_list(const std::filesystem::path& path);

}  // namespace metafg::io

#endif  // METAFG_IO_HPP
