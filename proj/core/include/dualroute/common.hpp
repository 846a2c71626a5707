#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace dualroute {

// Error taxonomy; tools/ maps each class onto a distinct process exit code.
struct IoError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ParseError : std::runtime_error { using std::runtime_error::runtime_error; };
struct SchemaError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ConfigError : std::runtime_error { using std::runtime_error::runtime_error; };
struct ShapeError : std::runtime_error { using std::runtime_error::runtime_error; };
struct NumericError : std::runtime_error { using std::runtime_error::runtime_error; };

// Warnings are routed through a process-wide sink so tests can capture them.
// The default sink prints "warning: <message>" to stderr.
using WarnSink = std::function<void(const std::string&)>;
void set_warn_sink(WarnSink sink);  // nullptr restores the default
void warn(const std::string& message);

}  // namespace dualroute
