#pragma once

#include <stdexcept>
#include <string>

namespace archoscope {

// Base class for every error the toolkit raises on purpose. The CLI maps
// these onto its exit-code contract (2 input, 3 synthesis, 4 unresolved).
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

class SchemaError : public Error {
  public:
    using Error::Error;
};

class NonIntegralShape : public Error {
  public:
    using Error::Error;
};

class DivisibilityError : public Error {
  public:
    using Error::Error;
};

class SampleRateTooLow : public Error {
  public:
    using Error::Error;
};

class FormatError : public Error {
  public:
    using Error::Error;
};

class WindowLargerThanTrace : public Error {
  public:
    using Error::Error;
};

class NoActivityDetected : public Error {
  public:
    using Error::Error;
};

class NoPeriodicity : public Error {
  public:
    using Error::Error;
};

class BlocksNotFound : public Error {
  public:
    using Error::Error;
};

class AmbiguousKernelSize : public Error {
  public:
    using Error::Error;
};

class InconsistentCounts : public Error {
  public:
    using Error::Error;
};

class NoSolution : public Error {
  public:
    using Error::Error;
};

} // namespace archoscope
