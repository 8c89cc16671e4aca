#include "kprnet/tensor.hpp"

#include <cmath>
#include <string>

namespace kpr {

void Tensor::add_(const Tensor& other) {
    if (!same_shape(other)) throw ArgumentError("Tensor::add_: shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::scale_(double a) {
    for (double& v : data_) v *= a;
}

void Tensor::check_finite(const char* what) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
        if (!std::isfinite(data_[i]))
            throw DataError(std::string(what) + ": non-finite value at flat index " +
                            std::to_string(i));
    }
}

}  // namespace kpr
