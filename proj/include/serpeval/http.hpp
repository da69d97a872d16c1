#pragma once

// Single include point for cpp-httplib so every translation unit sees the
// same configuration.

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
