#pragma once

#include <stdexcept>
#include <string>

namespace fiberseg {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : Error { using Error::Error; };
struct NoSlicesFound : Error { using Error::Error; };
struct InconsistentSliceShape : Error { using Error::Error; };
struct IndexOutOfRange : Error { using Error::Error; };
struct GeometryMismatch : Error { using Error::Error; };
struct MissingTile : Error { using Error::Error; };
struct DuplicateTile : Error { using Error::Error; };
struct ShapeMismatch : Error { using Error::Error; };
struct DegenerateHistogram : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct ArchMismatch : Error { using Error::Error; };
struct CorruptFile : Error { using Error::Error; };
struct SingleClassGold : Error { using Error::Error; };
struct PlacementFailure : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };

}  // namespace fiberseg
