// Copyright (c) 2026 The adfg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace adfg {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
public:
    using Error::Error;
};

// A forward computation produced NaN or Inf, or a value is out of its numeric domain.
class NumericError : public Error {
public:
    using Error::Error;
};

// Misuse of the autodiff tape (second backward, detached loss, foreign variable).
class TapeError : public Error {
public:
    using Error::Error;
};

// Malformed serialized data: containers, JSONL records, prompt text.
class FormatError : public Error {
public:
    using Error::Error;
};

// Caller violated an operation precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

// Fingerprint mismatch while applying a release step.
class FingerprintError : public Error {
public:
    using Error::Error;
};

}  // namespace adfg
