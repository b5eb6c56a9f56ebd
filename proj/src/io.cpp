#include "metafg/io.hpp"

#include <charconv>
#include <sstream>

namespace metafg::io {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path.string() + "' for reading");
  return is;
}

std::string header_line(std::istream& is, const std::string& what) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("unexpected end of " + what + " header");
  return line;
}

std::string expect_key(std::istream& is, const std::string& key, const std::string& what) {
  const std::string line = header_line(is, what);
  if (line.rfind(key + " ", 0) != 0)
    throw FormatError("malformed " + what + " header: expected '" + key + "', got '" + line + "'");
  return line.substr(key.size() + 1);
}

std::size_t parse_size(const std::string& text, const std::string& what) {
  std::size_t value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw FormatError("malformed " + what + ": '" + text + "'");
  return value;
}

void write_index_list(const std::filesystem::path& path, std::span<const std::size_t> indices) {
  std::ofstream os = open_out(path);
  for (std::size_t i : indices) os << i << '\n';
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

std::vector<std::size_t> read_index_list(const std::filesystem::path& path) {
  std::ifstream is = open_in(path);
  std::vector<std::size_t> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(parse_size(line, "index list entry"));
  }
  return out;
}

}  // namespace metafg::io
