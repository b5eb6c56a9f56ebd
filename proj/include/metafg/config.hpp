#ifndef METAFG_CONFIG_HPP
#define METAFG_CONFIG_HPP

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace metafg {

/// Flat `key = value` settings. Lines starting with '#' are comments.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

std::string trim(const std::string& s);
/// Comma-separated list with surrounding whitespace removed.
std::vector<std::string> split_list(const std::string& s);

double parse_double(const std::string& text, const std::string& key);
std::size_t parse_count(const std::string& text, const std::string& key);
bool parse_bool(const std::string& text, const std::string& key);

}  // namespace metafg

#endif  // METAFG_CONFIG_HPP
