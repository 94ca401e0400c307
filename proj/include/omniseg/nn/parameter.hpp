// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "omniseg/tensor.hpp"

namespace omniseg::nn {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
using ParameterList = std::vector<Parameter<T>*>;

}  // namespace omniseg::nn
