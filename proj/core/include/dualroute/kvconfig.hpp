#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace dualroute {

// Flat `key = value` configuration text. One pair per line, '#' starts a
// comment, blank lines are ignored. Values are free text up to end of line;
// list-valued keys hold whitespace-separated words.
class KvFile {
 public:
  static KvFile parse_file(const std::string& path);
  static KvFile parse_text(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& key) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::vector<std::string> get_words(const std::string& key,
                                     const std::vector<std::string>& fallback) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
  std::string origin_;
};

}  // namespace dualroute
