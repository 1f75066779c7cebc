#pragma once

#include <cstdio>
#include <string>

namespace shardexec {

// 0 = silent, 1 = info, 2 = debug, 3 = trace.
extern int g_log_level;

void log_line(int level, const std::string& who, const std::string& msg);

#define SXLOG(level, who, msg)                          \
    do {                                                \
        if (::shardexec::g_log_level >= (level))        \
            ::shardexec::log_line((level), (who), (msg)); \
    } while (0)

}  // namespace shardexec
