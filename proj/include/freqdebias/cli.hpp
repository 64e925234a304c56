/*
 * Copyright 2026 The FreqDebias Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace freqdebias {

inline constexpr const char* kVersion = "0.1.0";

// Misuse of the command line that the parser itself cannot catch, such as
// a non-empty output directory without --force.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Runs one subcommand. Returns 0 on success, 1 on validation or usage
// errors and 2 on runtime failures. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace freqdebias
