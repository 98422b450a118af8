#include "sthfl/error.hpp"

namespace sthfl {

int exit_code(ErrorCategory category) noexcept {
  switch (category) {
    case ErrorCategory::kConfig:
      return 2;
    case ErrorCategory::kData:
      return 3;
    case ErrorCategory::kProtocol:
      return 4;
    case ErrorCategory::kIo:
      return 5;
    case ErrorCategory::kShape:
      return 6;
  }
  return 1;
}

}  // namespace sthfl
