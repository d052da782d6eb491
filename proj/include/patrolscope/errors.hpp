#pragma once

#include <stdexcept>
#include <string>

namespace patrolscope {

// Bad or inconsistent user-supplied data (files, config). CLI maps to exit 1.
class InputError : public std::runtime_error {
public:
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

// Broken internal invariant. CLI maps to exit 2.
class InternalError : public std::logic_error {
public:
  explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

}  // namespace patrolscope
