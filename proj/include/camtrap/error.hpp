#pragma once

#include <stdexcept>
#include <string>

namespace camtrap {

// Input that violates a documented contract (bad box, unknown class, malformed row).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Local filesystem failure: unwritable directory, missing media file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Remote service failure that survived the retry budget.
class RemoteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Credentials were rejected by the remote service. Never retried.
class AuthError : public RemoteError {
 public:
  using RemoteError::RemoteError;
};

// Process exit codes shared by every CLI command.
enum class ExitCode : int {
  kOk = 0,
  kUsage = 1,
  kInvalidInput = 2,
  kIo = 3,
  kRemote = 4,
  kAuth = 5,
};

}  // namespace camtrap
