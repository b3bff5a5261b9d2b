// Copyright 2026 The HCN Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace hcn {

// Base of every error raised by the library. The CLI maps UsageError and
// ConfigError to exit status 1 and everything else to exit status 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor extents disagree with what an operation requires.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A caller passed an argument outside an operation's contract.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Input data violates a dataset invariant (malformed records, bad shapes).
class DataError : public Error {
 public:
  using Error::Error;
};

// Run configuration is invalid or references missing resources.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A NaN/Inf appeared where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace hcn
