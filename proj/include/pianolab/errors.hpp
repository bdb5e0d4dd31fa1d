#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace pianolab {

struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ShapeError  : std::runtime_error { using std::runtime_error::runtime_error; };
struct ValueError  : std::runtime_error { using std::runtime_error::runtime_error; };
struct IoError     : std::runtime_error { using std::runtime_error::runtime_error; };
struct ParseError  : std::runtime_error { using std::runtime_error::runtime_error; };

/// Optimization produced non-finite values or blew past the loss ceiling.
/// Carries the global step index at which the run came apart.
struct DivergenceError : std::runtime_error {
  DivergenceError(const std::string& what, std::int64_t step)
      : std::runtime_error(what), step_index(step) {}
  std::int64_t step_index;
};

}  // namespace pianolab
