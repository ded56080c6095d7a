#pragma once

#include <stdexcept>
#include <string>

namespace predbal {

// Error categories map onto CLI exit codes: config -> 2, data -> 3, numeric -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// -- data errors --------------------------------------------------------

struct MalformedRecord : DataError {
  explicit MalformedRecord(std::size_t line, const std::string& what)
      : DataError("malformed record at line " + std::to_string(line) + ": " + what),
        line(line) {}
  std::size_t line;
};

struct UnknownClass : DataError {
  UnknownClass(const std::string& name, std::size_t line)
      : DataError("unknown class \"" + name + "\" at line " + std::to_string(line)),
        name(name),
        line(line) {}
  std::string name;
  std::size_t line;
};

struct EmptyDataset : DataError {
  EmptyDataset() : DataError("dataset is empty") {}
  explicit EmptyDataset(const std::string& what) : DataError(what) {}
};

struct DegenerateSplit : DataError {
  explicit DegenerateSplit(const std::string& what) : DataError(what) {}
};

struct InvalidId : DataError {
  explicit InvalidId(const std::string& what) : DataError(what) {}
};

struct LengthMismatch : DataError {
  explicit LengthMismatch(const std::string& what) : DataError(what) {}
};

struct NegativeEntry : DataError {
  explicit NegativeEntry(const std::string& what) : DataError(what) {}
};

struct ShapeMismatch : DataError {
  explicit ShapeMismatch(const std::string& what) : DataError(what) {}
};

struct NonFiniteInput : DataError {
  explicit NonFiniteInput(const std::string& what) : DataError(what) {}
};

struct EmptyImage : DataError {
  explicit EmptyImage(const std::string& what) : DataError(what) {}
};

struct NoGold : DataError {
  explicit NoGold(const std::string& what) : DataError(what) {}
};

struct VocabMismatch : DataError {
  explicit VocabMismatch(const std::string& what) : DataError(what) {}
};

struct MissingOracle : DataError {
  explicit MissingOracle(const std::string& what) : DataError(what) {}
};

// -- config errors ------------------------------------------------------

struct InvalidDims : ConfigError {
  explicit InvalidDims(const std::string& what) : ConfigError(what) {}
};

struct InvalidAlpha : ConfigError {
  explicit InvalidAlpha(const std::string& what) : ConfigError(what) {}
};

struct InvalidBase : ConfigError {
  explicit InvalidBase(const std::string& what) : ConfigError(what) {}
};

struct InvalidM : ConfigError {
  explicit InvalidM(const std::string& what) : ConfigError(what) {}
};

struct EmptySpec : ConfigError {
  explicit EmptySpec(const std::string& what) : ConfigError(what) {}
};

struct MissingModel : ConfigError {
  explicit MissingModel(const std::string& what) : ConfigError(what) {}
};

struct UnknownAblation : ConfigError {
  explicit UnknownAblation(const std::string& what) : ConfigError(what) {}
};

// -- numeric errors -----------------------------------------------------

struct NonFiniteLoss : NumericError {
  NonFiniteLoss(int epoch, int batch, double max_abs_grad)
      : NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                     std::to_string(batch) + ", max |grad| = " + std::to_string(max_abs_grad)),
        epoch(epoch),
        batch(batch),
        max_abs_grad(max_abs_grad) {}
  int epoch;
  int batch;
  double max_abs_grad;
};

}  // namespace predbal
