#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ssrem {

// Malformed or inconsistent input data. The CLI maps this to exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad command-line usage or invalid option values. Exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using WarningHandler = std::function<void(std::string_view)>;

// Installs a process-wide handler for recoverable anomalies and returns the
// previous one. The default handler writes "warning: ..." lines to stderr.
WarningHandler set_warning_handler(WarningHandler handler);
void warn(std::string_view message);

}  // namespace ssrem
