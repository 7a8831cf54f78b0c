// Copyright 2026 The Authors.
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

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rdr {

/// Base of every error raised by the library. Each subclass maps onto one
/// CLI exit code (see exit_code()).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 4; }
};

/// A required file is missing or unreadable.
class IngestError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Declared and observed shapes or dtypes disagree.
class SchemaError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// A query references something that does not exist or is out of range.
class QueryError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 2; }
};

/// Non-finite activation values.
class DataError : public Error {
 public:
  DataError(const std::string& what, int layer_id, std::size_t instance)
      : Error(what), layer_id_(layer_id), instance_(instance) {}
  int exit_code() const noexcept override { return 3; }
  int layer_id() const noexcept { return layer_id_; }
  std::size_t instance() const noexcept { return instance_; }

 private:
  int layer_id_;
  std::size_t instance_;
};

/// Input is well formed but geometrically or statistically degenerate
/// (empty negative set, zero-norm vector, collinear anchors, ...).
class DegenerateInput : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Fewer unanimous candidate neurons than requested principal neurons.
class InsufficientCandidates : public Error {
 public:
  InsufficientCandidates(std::size_t available, std::size_t requested,
                         const std::string& context = {})
      : Error(context + "only " + std::to_string(available) +
              " candidate neurons available, " + std::to_string(requested) +
              " requested"),
        available_(available),
        requested_(requested) {}
  int exit_code() const noexcept override { return 3; }
  std::size_t available() const noexcept { return available_; }
  std::size_t requested() const noexcept { return requested_; }

 private:
  std::size_t available_;
  std::size_t requested_;
};

}  // namespace rdr
