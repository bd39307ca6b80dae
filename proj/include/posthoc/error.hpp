#ifndef POSTHOC_ERROR_HPP
#define POSTHOC_ERROR_HPP

#include <stdexcept>
#include <string>

namespace posthoc {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or parameter combination (bad alpha, K > m, B too small...).
class ParamError : public Error {
public:
  using Error::Error;
};

/// Malformed binary or JSON container.
class FormatError : public Error {
public:
  using Error::Error;
};

/// Well-formed container whose contents violate a data invariant (NaN, bad affine).
class DataError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

/// Mask selects no voxel.
class MaskError : public Error {
public:
  using Error::Error;
};

class IndexError : public Error {
public:
  using Error::Error;
};

/// Caller broke a documented precondition (e.g. unsorted input to a sorted-only routine).
class ContractError : public Error {
public:
  using Error::Error;
};

} // namespace posthoc

#endif
