// Copyright 2026 The IPO Workbench Authors
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

#ifndef IPO_ERRORS_H_
#define IPO_ERRORS_H_

#include <stdexcept>
#include <string>

namespace ipo {

// Closed-loop spectral radius is not below one; the quadratic cost diverges.
class UnstableError : public std::runtime_error {
 public:
  explicit UnstableError(const std::string& what) : std::runtime_error(what) {}
};

// An iterative solver exhausted its budget before meeting tolerance.
class NonConvergentError : public std::runtime_error {
 public:
  explicit NonConvergentError(const std::string& what)
      : std::runtime_error(what) {}
};

// Step backtracking could not find a stabilizing update.
class StabilityLostError : public std::runtime_error {
 public:
  explicit StabilityLostError(const std::string& what)
      : std::runtime_error(what) {}
};

// Non-finite loss during training.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what)
      : std::runtime_error(what) {}
};

}  // namespace ipo

#endif  // IPO_ERRORS_H_
