#include "metafg/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace metafg {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw std::invalid_argument(origin + ":" + std::to_string(lineno) + ": empty key");
    cfg.values_[key] = trim(t.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config '" + path.string() + "'");
  std::stringstream buf;
  buf << is.rdbuf();
  return parse(buf.str(), path.string());
}

const std::string& KeyValueConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw std::out_of_range("missing config key '" + key + "'");
  return it->second;
}

double parse_double(const std::string& text, const std::string& key) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::logic_error&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw std::invalid_argument("config '" + key + "': not a number: '" + text + "'");
  return v;
}

std::size_t parse_count(const std::string& text, const std::string& key) {
  std::size_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw std::invalid_argument("config '" + key + "': not a non-negative integer: '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "1" || text == "true" || text == "on" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "off" || text == "no") return false;
  throw std::invalid_argument("config '" + key + "': not a boolean: '" + text + "'");
}

}  // namespace metafg
