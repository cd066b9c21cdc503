// Copyright 2026 The AttrSyn Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace attrsyn {

// Base of every error raised by the library. Callers that only need to
// report failures can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A documented precondition of an operation was violated by the caller.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Malformed input text (manifests, model files, backend responses).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Filesystem failure: open, read, write, rename.
class IoError : public Error {
 public:
  using Error::Error;
};

// An external backend (LLM, text-to-image, embedding) failed.
class BackendError : public Error {
 public:
  using Error::Error;
};

// Referenced entity does not exist (sessions, concepts, records).
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Operation conflicts with the current state (e.g. mutating a finalized session).
class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace attrsyn
