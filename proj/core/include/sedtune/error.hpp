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

#pragma once

#include <stdexcept>
#include <string>

namespace sedtune {

/// Invalid or inconsistent configuration (bad generator spec, unknown keys,
/// missing warm start, ...). The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Data that parses but violates a domain invariant (offset < onset, unknown class).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (shape mismatch, warping the CNN
/// branch, two consistency terms active at once).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Numerical failure during training (non-finite loss).
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define SEDTUNE_REQUIRE(cond, msg)                      \
  do {                                                  \
    if (!(cond)) throw ::sedtune::ContractError((msg)); \
  } while (0)

}  // namespace sedtune
