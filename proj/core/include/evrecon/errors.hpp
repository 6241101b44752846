#pragma once

#include <stdexcept>
#include <string>

namespace evrecon {

// Base class for all pipeline errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Event parsing.
class MalformedLine : public Error {
 public:
  using Error::Error;
};
class CoordinateOutOfRange : public Error {
 public:
  using Error::Error;
};
class NonMonotoneTimestamp : public Error {
 public:
  using Error::Error;
};

// Simulator.
class DegenerateTrajectory : public Error {
 public:
  using Error::Error;
};

// Intensity reconstruction.
class OutOfOrderWindow : public Error {
 public:
  using Error::Error;
};
class MissingFile : public Error {
 public:
  using Error::Error;
};
class NonMonotoneManifest : public Error {
 public:
  using Error::Error;
};
class UnsupportedImageFormat : public Error {
 public:
  using Error::Error;
};
class CorruptHeader : public Error {
 public:
  using Error::Error;
};

// Correspondence search.
class ImageTooSmall : public Error {
 public:
  using Error::Error;
};
class DegenerateConfiguration : public Error {
 public:
  using Error::Error;
};

// Incremental reconstruction.
class NoValidInitialPair : public Error {
 public:
  using Error::Error;
};
class CheiralityAmbiguity : public Error {
 public:
  using Error::Error;
};
class NoRegistrableImage : public Error {
 public:
  using Error::Error;
};
class NumericalFailure : public Error {
 public:
  using Error::Error;
};

// Dense reconstruction.
class NoUsableNeighbors : public Error {
 public:
  using Error::Error;
};

// File IO.
class IoFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace evrecon
