#pragma once

#include <map>
#include <string>

namespace blindsr {

// Nested key-value config: "[section]" headers, "key = value" lines,
// '#' comments. Sections: model, schedule, degradation, optimizer, io.
class KVConfig {
 public:
  static KVConfig parse_file(const std::string& path);
  static KVConfig parse_string(const std::string& text);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback = "") const;
  double get_double(const std::string& section, const std::string& key,
                    double fallback) const;
  int64_t get_int(const std::string& section, const std::string& key,
                  int64_t fallback) const;
  void set(const std::string& section, const std::string& key,
           const std::string& value);

  // sorted, normalized rendering used for fingerprinting
  std::string canonical_text() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

uint64_t fnv1a64(const std::string& s);

// hex digest of canonical config text + root seed
std::string config_fingerprint(const KVConfig& cfg, uint64_t seed);

}  // namespace blindsr
