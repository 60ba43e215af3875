#pragma once

#include <stdexcept>
#include <string>

namespace srnn {

// Failure classes. The CLI maps these onto distinct exit codes, so keep
// them separate types rather than one catch-all.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated call contract (empty pyramid, non-scalar backward root, ...).
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed external data (CIFAR-10 records, ...).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Checkpoint problems: bad magic/version/CRC, truncation, missing tensors.
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training produced a non-finite loss.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace srnn
