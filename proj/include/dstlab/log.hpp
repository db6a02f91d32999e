#pragma once

#include <spdlog/spdlog.h>

namespace dstlab {

/// Shared stderr logger. Level comes from the DST_LAB_LOG environment
/// variable (trace, debug, info, warn, error, off); default "warn".
spdlog::logger& log();

}  // namespace dstlab
