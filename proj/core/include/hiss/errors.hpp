#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hiss {

// Every error carries a stable category string; the CLI prints it as the
// first token of its one-line failure message.
class Error : public std::runtime_error {
 public:
  Error(std::string category, const std::string& what)
      : std::runtime_error(what), category_(std::move(category)) {}
  const std::string& category() const noexcept { return category_; }

 private:
  std::string category_;
};

#define HISS_DEFINE_ERROR(Name)                                         \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(#Name, what) {}      \
  };

HISS_DEFINE_ERROR(ShapeError)
HISS_DEFINE_ERROR(DomainError)
HISS_DEFINE_ERROR(GraphError)
HISS_DEFINE_ERROR(RateError)
HISS_DEFINE_ERROR(AlignmentError)
HISS_DEFINE_ERROR(ExtrapolationError)
HISS_DEFINE_ERROR(LengthError)
HISS_DEFINE_ERROR(FilterError)
HISS_DEFINE_ERROR(CalibError)
HISS_DEFINE_ERROR(SplitError)
HISS_DEFINE_ERROR(ManifestError)
HISS_DEFINE_ERROR(DivergenceError)
HISS_DEFINE_ERROR(ConfigError)
HISS_DEFINE_ERROR(IoError)

#undef HISS_DEFINE_ERROR

class NumericalError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit NumericalError(const std::string& what, std::size_t timestep = npos)
      : Error("NumericalError",
              timestep == npos ? what : what + " at timestep " + std::to_string(timestep)),
        timestep_(timestep) {}
  std::size_t timestep() const noexcept { return timestep_; }

 private:
  std::size_t timestep_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("ParseError", what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace hiss
