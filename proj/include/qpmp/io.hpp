#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace qpmp::io {

/// Round-trippable decimal text for a double (%.17g), used in every output
/// file so reruns are byte-identical.
std::string fmt(double v);

/// Ordered `key = value` document. Keys appear in insertion order.
class KeyValueDoc {
 public:
  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, double value) { set(key, fmt(value)); }
  void set(const std::string& key, long long value) { set(key, std::to_string(value)); }
  void set(const std::string& key, unsigned long long value) { set(key, std::to_string(value)); }
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, std::size_t value) {
    set(key, static_cast<unsigned long long>(value));
  }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }

  const std::string* get(const std::string& key) const;
  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

  std::string render() const;
  static KeyValueDoc parse(const std::string& text);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Writes `content` to `path`, throwing IoError on failure.
void write_file(const std::filesystem::path& path, const std::string& content);
std::string read_file(const std::filesystem::path& path);

}  // namespace qpmp::io
