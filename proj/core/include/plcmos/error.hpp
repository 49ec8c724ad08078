#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace plcmos {

/// Base class for every error raised by the library.
class Error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public Error
{
public:
  ParseError(std::size_t line, const std::string& what)
    : Error("line " + std::to_string(line) + ": " + what)
    , m_line{line}
  {}

  std::size_t line() const noexcept { return m_line; }

private:
  std::size_t m_line;
};

/// Well-formed input that violates a structural invariant.
class StructureError : public Error
{
public:
  using Error::Error;
};

/// Weight file produced by an incompatible format or config.
class VersionError : public Error
{
public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class InvalidArgument : public Error
{
public:
  using Error::Error;
};

} // namespace plcmos
