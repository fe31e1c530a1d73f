#pragma once
// Error taxonomy. Each subclass maps to a distinct CLI exit code; library code
// throws these instead of touching the process state.

#include <stdexcept>
#include <string>

namespace smt {

struct Error : std::runtime_error {
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Dimension / layout disagreements. Messages name both offending shapes.
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(what) {}
};

// Index outside a valid range (block indices, token ids, column slices).
struct BoundsError : Error {
  explicit BoundsError(const std::string& what) : Error(what) {}
};

// Object used out of protocol: second backward on a tape, stale activation
// cache, scoring an accumulator that never saw a gradient.
struct StateError : Error {
  explicit StateError(const std::string& what) : Error(what) {}
};

// Bad or inconsistent run configuration (including file format versions).
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(what) {}
};

// A budget too small to afford a single block.
struct EmptySelectionError : Error {
  explicit EmptySelectionError(const std::string& what) : Error(what) {}
};

// Filesystem trouble: unreadable, unwritable, or missing artifact files.
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(what) {}
};

// Data stream problems. `iterations_completed` reports progress made before a
// stream ran dry (e.g. a truncated warm-up).
struct DataError : Error {
  explicit DataError(const std::string& what, long iterations_completed = -1)
      : Error(what), iterations_completed(iterations_completed) {}
  long iterations_completed;
};

}  // namespace smt
