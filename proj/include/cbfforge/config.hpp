#pragma once

// Flat `key = value` configuration with `#` comments. Every key is declared in
// a registry with a default and a one-line description; unknown keys are
// rejected at load time.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace cbfforge {

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

const std::vector<ConfigKey>& config_registry();
// One line per key: "name = default  # help".
std::string describe_config_keys();

class Config {
 public:
  Config();  // all defaults

  static Config parse(const std::string& text, const std::string& origin = "<string>");
  static Config load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  bool has_override(const std::string& key) const { return overrides_.count(key) != 0; }

  const std::string& str(const std::string& key) const;
  double num(const std::string& key) const;
  int integer(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> num_list(const std::string& key) const;
  std::vector<int> int_list(const std::string& key) const;
  std::vector<std::string> str_list(const std::string& key) const;

  // Canonical "key = value" dump of every key, sorted.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, std::string> overrides_;
};

}  // namespace cbfforge
