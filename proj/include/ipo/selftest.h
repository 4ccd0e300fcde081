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


#ifndef IPO_SELFTEST_H_
#define IPO_SELFTEST_H_

#include <string>
#include <vector>

namespace ipo::oracle {

struct CheckResult {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

// Compares production routines against the independent oracles: series and
// finite-difference references, closed-form LQR values, simulation, graph
// search and the GAE hand recursion. Takes a few seconds.
std::vector<CheckResult> RunSelfTests();

}  // namespace ipo::oracle

#endif  // IPO_SELFTEST_H_
