#include "blindsr/config.hpp"

#include <fstream>
#include <sstream>

#include "blindsr/common.hpp"

namespace blindsr {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KVConfig KVConfig::parse_file(const std::string& path) {
  std::ifstream is(path);
  BSR_CHECK(is.is_open(), "cannot open config: " << path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_string(ss.str());
}

KVConfig KVConfig::parse_string(const std::string& text) {
  KVConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      BSR_CHECK(t.back() == ']', "config line " << lineno << ": unterminated section");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    auto eq = t.find('=');
    BSR_CHECK(eq != std::string::npos, "config line " << lineno << ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    BSR_CHECK(!key.empty(), "config line " << lineno << ": empty key");
    cfg.sections_[section][key] = val;
  }
  return cfg;
}

bool KVConfig::has(const std::string& section, const std::string& key) const {
  auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

std::string KVConfig::get(const std::string& section, const std::string& key,
                          const std::string& fallback) const {
  auto it = sections_.find(section);
  if (it == sections_.end()) return fallback;
  auto kt = it->second.find(key);
  return kt == it->second.end() ? fallback : kt->second;
}

double KVConfig::get_double(const std::string& section, const std::string& key,
                            double fallback) const {
  if (!has(section, key)) return fallback;
  return std::stod(get(section, key));
}

int64_t KVConfig::get_int(const std::string& section, const std::string& key,
                          int64_t fallback) const {
  if (!has(section, key)) return fallback;
  return std::stoll(get(section, key));
}

void KVConfig::set(const std::string& section, const std::string& key,
                   const std::string& value) {
  sections_[section][key] = value;
}

std::string KVConfig::canonical_text() const {
  std::ostringstream os;
  for (const auto& [sec, kv] : sections_) {
    os << '[' << sec << "]\n";
    for (const auto& [k, v] : kv) os << k << '=' << v << '\n';
  }
  return os.str();
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_fingerprint(const KVConfig& cfg, uint64_t seed) {
  std::string text = cfg.canonical_text() + "\nseed=" + std::to_string(seed);
  uint64_t h = fnv1a64(text);
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace blindsr
