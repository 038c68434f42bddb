#pragma once

#include <stdexcept>
#include <string>

namespace langbal {

// Domain error tagged with the module that raised it. The CLI turns these
// into exit code 1 plus a JSON error record.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

}  // namespace langbal
