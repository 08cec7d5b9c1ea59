// Copyright 2026 The ctcbridge Authors. All Rights Reserved.
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

namespace ctcbridge {

// Caller broke a precondition (shape mismatch, out-of-range id, misuse of
// the tape). Maps to a usage error at the C boundary.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Argument outside the mathematical domain of an operation (tau <= 0,
// blank downscale < 1, empty WER reference ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed file or config content.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values appeared during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CTCB_REQUIRE(cond, msg)                                   \
  do {                                                            \
    if (!(cond)) throw ::ctcbridge::ContractViolation(msg);       \
  } while (0)

}  // namespace ctcbridge
