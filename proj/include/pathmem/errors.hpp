#pragma once

#include <stdexcept>
#include <string>

namespace pathmem {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
struct DimensionError : Error { using Error::Error; };
// Math domain violation (log of a non-positive value, ...).
struct DomainError : Error { using Error::Error; };
// Entity/relation/segment id outside its declared range.
struct IndexError : Error { using Error::Error; };
// API misuse: double backward, double augmentation, non-scalar loss, ...
struct ContractError : Error { using Error::Error; };
// File missing or unreadable/unwritable.
struct IoError : Error { using Error::Error; };
// Malformed text input (non-integer token, short line, ...).
struct ParseError : Error { using Error::Error; };
// Well-formed input that violates dataset/checkpoint constraints.
struct ValidationError : Error { using Error::Error; };
// Invalid run configuration.
struct ConfigError : Error { using Error::Error; };
// Checkpoint version or checksum mismatch.
struct CheckpointError : Error { using Error::Error; };

}  // namespace pathmem
