#pragma once

#include <stdexcept>
#include <string>

namespace sdissect {

// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or unsupported on-disk artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

// Population standard deviation of a map is at or below the degeneracy threshold.
class ConstantMap : public Error {
 public:
  using Error::Error;
};

class EmptyFixations : public Error {
 public:
  using Error::Error;
};

class EmptyMask : public Error {
 public:
  using Error::Error;
};

// fixations AND mask selects no cell; the region must be skipped, never scored as zero.
class NoFixationsInRegion : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

}  // namespace sdissect
