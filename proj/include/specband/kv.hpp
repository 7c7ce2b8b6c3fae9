#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "specband/common.hpp"

namespace specband {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// 'key = value' lines; '#' starts a comment; later keys overwrite earlier ones.
inline std::map<std::string, std::string> parse_kv_text(const std::string& text,
                                                        const std::string& origin) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw DataError(origin + ": expected 'key = value', got '" + stripped + "'");
    }
    kv[trim(stripped.substr(0, eq))] = trim(stripped.substr(eq + 1));
  }
  return kv;
}

inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str(), path);
}

inline const std::string& kv_require(const std::map<std::string, std::string>& kv,
                                     const std::string& key, const std::string& origin) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw DataError(origin + ": missing key '" + key + "'");
  return it->second;
}

inline long kv_long(const std::map<std::string, std::string>& kv, const std::string& key,
                    const std::string& origin) {
  const std::string& raw = kv_require(kv, key, origin);
  try {
    std::size_t pos = 0;
    const long v = std::stol(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw DataError(origin + ": key '" + key + "' is not an integer: '" + raw + "'");
  }
}

inline double kv_double(const std::map<std::string, std::string>& kv, const std::string& key,
                        const std::string& origin) {
  const std::string& raw = kv_require(kv, key, origin);
  try {
    std::size_t pos = 0;
    const double v = std::stod(raw, &pos);
    if (pos != raw.size()) throw std::invalid_argument(raw);
    return v;
  } catch (const std::exception&) {
    throw DataError(origin + ": key '" + key + "' is not a number: '" + raw + "'");
  }
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    const std::string t = trim(item);
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace specband
