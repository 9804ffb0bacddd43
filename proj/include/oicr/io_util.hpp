#pragma once

#include <string>

namespace oicr {

// Reads the whole file; throws FileError(io) if it cannot be opened or read.
std::string read_file(const std::string& path);

// Writes to "<path>.tmp" then renames, so consumers never observe a partial
// file. Throws FileError(io) on failure.
void write_file_atomic(const std::string& path, const std::string& bytes);

}  // namespace oicr
