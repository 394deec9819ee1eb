#include "dualkit/space.hpp"

namespace dualkit {

std::string describe(const Space& s) {
    if (const auto* v = std::get_if<VectorSpace>(&s)) {
        return "vector[" + std::to_string(v->dim) + "]";
    }
    const auto& img = std::get<ImageSpace>(s);
    return "image[" + std::to_string(img.width) + "x" + std::to_string(img.height) + "x" +
           std::to_string(img.channels) + "]";
}

std::size_t flat_dim(const Space& s) {
    if (const auto* v = std::get_if<VectorSpace>(&s)) return v->dim;
    const auto& img = std::get<ImageSpace>(s);
    return img.width * img.height * img.channels;
}

}  // namespace dualkit
