#pragma once

#include <stdexcept>
#include <string>

#include <fmt/core.h>

namespace gapnet {

// Internal invariant violation: a bug in this library, not bad input.
// The CLI maps this to exit code 2, everything else user-facing to 1.
class CheckError : public std::logic_error {
 public:
  explicit CheckError(const std::string& what) : std::logic_error(what) {}
};

// File or stream level problem (unreadable image, truncated payload, ...).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gapnet

// Validates caller-supplied arguments and data.
#define GAPNET_REQUIRE(cond, ...)                                  \
  do {                                                             \
    if (!(cond)) throw std::invalid_argument(fmt::format(__VA_ARGS__)); \
  } while (0)

// Guards internal invariants.
#define GAPNET_CHECK(cond, ...)                                              \
  do {                                                                       \
    if (!(cond))                                                             \
      throw ::gapnet::CheckError(                                            \
          fmt::format("{}:{}: {}", __FILE__, __LINE__, fmt::format(__VA_ARGS__))); \
  } while (0)
