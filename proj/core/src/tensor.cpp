// Copyright 2026 The sedtune Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "sedtune/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "sedtune/error.hpp"

namespace sedtune {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::span<const double> values) : shape_(std::move(shape)) {
  SEDTUNE_REQUIRE(values.size() == numel(shape_), "Tensor: value count does not match shape " +
                                                      shape_str(shape_));
  data_.assign(values.begin(), values.end());
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  SEDTUNE_REQUIRE(numel(shape) == data_.size(),
                  "Tensor::reshape: cannot view " + shape_str(shape_) + " as " + shape_str(shape));
  shape_ = std::move(shape);
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

}  // namespace sedtune
