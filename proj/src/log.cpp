#include "shardexec/log.hpp"

#include "shardexec/config.hpp"

#include <cstring>

namespace shardexec {

int g_log_level = 0;

void log_line(int level, const std::string& who, const std::string& msg) {
    static const char* names[] = {"", "I", "D", "T"};
    int n = level < 1 ? 1 : (level > 3 ? 3 : level);
    std::fprintf(stderr, "[%s] %-8s %s\n", names[n], who.c_str(), msg.c_str());
}

const char* mode_name(Mode m) {
    switch (m) {
        case Mode::base: return "base";
        case Mode::dynamic: return "dynamic";
        case Mode::split: return "split";
    }
    return "?";
}

bool parse_mode(const char* s, Mode& out) {
    if (std::strcmp(s, "base") == 0) out = Mode::base;
    else if (std::strcmp(s, "dynamic") == 0) out = Mode::dynamic;
    else if (std::strcmp(s, "split") == 0) out = Mode::split;
    else return false;
    return true;
}

}  // namespace shardexec
