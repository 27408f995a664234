#pragma once

#include <algorithm>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace testsupport {

// fresh scratch directory per test, removed on destruction
struct TmpDir {
  std::filesystem::path path;

  explicit TmpDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("flygm_test_" + tag + "_" + std::to_string(uint64_t(std::time(nullptr))) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TmpDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }

 private:
  static int& counter() {
    static int c = 0;
    return c;
  }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) out.push_back(line);
  return out;
}

// minimal well-formedness check: tags balance, attributes quoted, one root
inline bool xml_well_formed(const std::string& text) {
  std::vector<std::string> stack;
  size_t i = 0;
  const size_t n = text.size();
  bool seen_root = false;
  while (i < n) {
    if (text[i] != '<') {
      ++i;
      continue;
    }
    size_t close = text.find('>', i);
    if (close == std::string::npos) return false;
    std::string tag = text.substr(i + 1, close - i - 1);
    i = close + 1;
    if (tag.empty()) return false;
    if (tag[0] == '?' || tag[0] == '!') continue;  // declaration or comment
    // attribute quotes must pair up inside the tag
    if (std::count(tag.begin(), tag.end(), '"') % 2 != 0) return false;
    if (tag[0] == '/') {
      std::string name = tag.substr(1);
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
      continue;
    }
    const bool self_closing = tag.back() == '/';
    if (self_closing) tag.pop_back();
    std::string name = tag.substr(0, tag.find_first_of(" \t\n\r"));
    if (name.empty()) return false;
    if (stack.empty()) {
      if (seen_root && !self_closing) return false;  // second root
      seen_root = true;
    }
    if (!self_closing) stack.push_back(name);
  }
  return stack.empty() && seen_root;
}

}  // namespace testsupport
