// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace dmacos::cli {

/// Runs one command line (args[0] is the program name). Returns the process
/// exit code: 0 when every declared output was written, 1 on a runtime
/// failure, 2 on a usage error.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Git blob object id (SHA-1 of "blob <size>\0" + contents) of a file.
std::string git_blob_sha1(const std::filesystem::path& path);

}  // namespace dmacos::cli
