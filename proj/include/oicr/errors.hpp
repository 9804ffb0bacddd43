#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace oicr {

enum class FileErrorKind { format, version, truncated, checksum, io };

inline const char* to_string(FileErrorKind k) {
  switch (k) {
    case FileErrorKind::format: return "format";
    case FileErrorKind::version: return "version";
    case FileErrorKind::truncated: return "truncated";
    case FileErrorKind::checksum: return "checksum";
    case FileErrorKind::io: return "io";
  }
  return "?";
}

// Raised by dataset/checkpoint readers and writers. Carries what went wrong,
// in which file, and at which byte offset (0 when no offset is meaningful).
class FileError : public std::runtime_error {
 public:
  FileError(FileErrorKind kind, std::string path, uint64_t offset, const std::string& detail)
      : std::runtime_error(std::string(to_string(kind)) + " error in " + path + " @" +
                           std::to_string(offset) + ": " + detail),
        kind(kind),
        path(std::move(path)),
        offset(offset) {}

  FileErrorKind kind;
  std::string path;
  uint64_t offset;
};

}  // namespace oicr
