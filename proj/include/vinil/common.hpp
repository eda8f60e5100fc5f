#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vinil {

/// Error type thrown by every operation in this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void str_append(std::ostringstream&) {}

template <typename T, typename... Rest>
void str_append(std::ostringstream& oss, T&& v, Rest&&... rest) {
  oss << std::forward<T>(v);
  str_append(oss, std::forward<Rest>(rest)...);
}

}  // namespace detail

template <typename... Args>
std::string str(Args&&... args) {
  std::ostringstream oss;
  detail::str_append(oss, std::forward<Args>(args)...);
  return oss.str();
}

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  throw Error(str(std::forward<Args>(args)...));
}

template <typename... Args>
void check(bool cond, Args&&... args) {
  if (!cond) fail(std::forward<Args>(args)...);
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream oss;
  oss << '(';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ", ";
    oss << shape[i];
  }
  oss << ')';
  return oss.str();
}

}  // namespace vinil
