/*
 * Copyright 2026 The pcbm Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// The `pcbm` command-line tool, as a library entry point so tests can run
// subcommands in-process.

#ifndef PCBM_CLI_H_
#define PCBM_CLI_H_

#include <ostream>
#include <string>
#include <vector>

namespace pcbm {

// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.
// `args` excludes the program name; argv includes it.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace pcbm

#endif  // PCBM_CLI_H_
