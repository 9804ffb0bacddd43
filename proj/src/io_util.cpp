#include "oicr/io_util.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oicr/errors.hpp"

namespace oicr {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError(FileErrorKind::io, path, 0, "cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw FileError(FileErrorKind::io, path, 0, "read failed");
  return bytes;
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FileError(FileErrorKind::io, tmp, 0, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw FileError(FileErrorKind::io, tmp, 0, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::remove(tmp.c_str());
    throw FileError(FileErrorKind::io, path, 0, "rename failed: " + ec.message());
  }
}

}  // namespace oicr
