#pragma once

#include <cstddef>
#include <string>
#include <variant>

namespace dualkit {

struct VectorSpace {
    std::size_t dim = 0;
    bool operator==(const VectorSpace&) const = default;
};

struct ImageSpace {
    std::size_t width = 0, height = 0, channels = 0;
    bool operator==(const ImageSpace&) const = default;
};

/// Input/output space of a module, tracked to enforce composability at
/// construction time.
using Space = std::variant<VectorSpace, ImageSpace>;

std::string describe(const Space& s);

/// Total number of scalar components.
std::size_t flat_dim(const Space& s);

}  // namespace dualkit
