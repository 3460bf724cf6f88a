#pragma once

namespace activeduel {

/// Sets the log level from ACTIVEDUEL_LOG (trace, debug, info, warn, error,
/// critical, off). Defaults to warn.
void configure_logging();

}  // namespace activeduel
