#pragma once

#include <stdexcept>
#include <string>

// Shape/contract assertions for programming errors. Always on: the cost is
// negligible next to the numeric kernels and silent shape bugs are worse.
#define OICR_CHECK(cond, msg)                                              \
  do {                                                                     \
    if (!(cond)) throw std::logic_error(std::string("check failed: ") + (msg)); \
  } while (0)
