// SPDX-License-Identifier: Apache-2.0
#include "homdet/tensor.hpp"

#include <sstream>

#include "homdet/error.hpp"

namespace homdet {

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(count(shape_) == data_.size(), "tensor data size does not match shape");
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  require(count(shape) == data_.size(), "reshape to " + std::to_string(count(shape)) +
                                            " elements from " + shape_string());
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::slice0(int begin, int n) const {
  require(!shape_.empty() && begin >= 0 && n >= 0 && begin + n <= shape_[0], "slice0 out of range");
  std::vector<int> shape = shape_;
  shape[0] = n;
  const std::size_t inner = data_.size() / static_cast<std::size_t>(shape_[0]);
  std::vector<double> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * inner),
                          data_.begin() + static_cast<std::ptrdiff_t>((begin + n) * inner));
  return Tensor(std::move(shape), std::move(out));
}

Tensor Tensor::concat0(const std::vector<Tensor>& parts) {
  require(!parts.empty(), "concat0 of nothing");
  std::vector<int> shape = parts.front().shape();
  require(!shape.empty(), "concat0 needs rank >= 1");
  shape[0] = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    require(p.rank() == shape.size() &&
                std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1),
            "concat0 trailing shape mismatch");
    shape[0] += p.dim(0);
    out.insert(out.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor(std::move(shape), std::move(out));
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "," : "") << shape_[i];
  os << ']';
  return os.str();
}

}  // namespace homdet
