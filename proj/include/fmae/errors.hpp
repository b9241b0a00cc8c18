#pragma once

#include <stdexcept>
#include <string>

namespace fmae {

/// Base class for every error raised by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not conform for the requested kernel.
struct ShapeError : Error {
  using Error::Error;
};

/// The input is structurally valid but carries no usable content
/// (empty mask, series shorter than two samples, no logits, ...).
struct DegenerateInputError : Error {
  using Error::Error;
};

/// A documented precondition was violated by the caller.
struct ContractError : Error {
  using Error::Error;
};

/// Internal bookkeeping produced an impossible state (double-filled grid,
/// hole in a scatter). Indicates a bug, not bad input.
struct InternalError : Error {
  using Error::Error;
};

/// Unknown channel name or an input that does not fit the channel schema.
struct SchemaError : Error {
  using Error::Error;
};

/// File reading, writing or parsing failure.
struct IoError : Error {
  using Error::Error;
};

/// Metric cannot be computed on the given sample (single-class AUROC, ...).
struct MetricError : Error {
  using Error::Error;
};

/// Training produced a non-finite loss or gradient.
struct TrainingDivergenceError : Error {
  using Error::Error;
};

}  // namespace fmae
