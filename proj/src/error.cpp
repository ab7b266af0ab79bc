// SPDX-License-Identifier: Apache-2.0
#include "homdet/error.hpp"

#include <cstdio>

namespace homdet {
namespace {

WarningHandler g_handler = nullptr;
void* g_user = nullptr;

}  // namespace

void set_warning_handler(WarningHandler handler, void* user) {
  g_handler = handler;
  g_user = user;
}

void warn(const std::string& message) {
  if (g_handler)
    g_handler(message.c_str(), g_user);
  else
    std::fprintf(stderr, "warning: %s\n", message.c_str());
}

}  // namespace homdet
