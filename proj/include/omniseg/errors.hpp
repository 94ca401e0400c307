// Copyright 2026 The OmniSeg Authors. All Rights Reserved.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace omniseg {

// Usage and input-contract failures. The CLI maps every subclass of
// ValidationError to exit code 2; anything else is a runtime failure.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class IndexError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class RegistryError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Checkpoint header does not match what the caller expects.
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Non-finite gradients, I/O failures and similar runtime faults.
class RuntimeFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace omniseg
