#pragma once

#include <stdexcept>
#include <string>

namespace eprsim {

// Exception categories map one-to-one onto CLI exit codes.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class InvalidInput : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return 1; }
};

class DegenerateData : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class CalibrationFailure : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

} // namespace eprsim
