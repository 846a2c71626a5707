#include "dualroute/common.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace dualroute {

namespace {
std::mutex g_warn_mutex;
WarnSink g_warn_sink;
}  // namespace

void set_warn_sink(WarnSink sink) {
  std::lock_guard<std::mutex> lock(g_warn_mutex);
  g_warn_sink = std::move(sink);
}

void warn(const std::string& message) {
  std::lock_guard<std::mutex> lock(g_warn_mutex);
  if (g_warn_sink) {
    g_warn_sink(message);
  } else {
    std::cerr << "warning: " << message << "\n";
  }
}

}  // namespace dualroute
