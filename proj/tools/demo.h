#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace cardiotel::tools {

struct DemoOptions {
    // About 20 s at the default tick.
    std::int64_t ticks = 134;
    int tick_ms = 150;
    std::string listen = "127.0.0.1:7071";
    std::filesystem::path out_dir = "demo-out";
    // Built-in desaturation script when unset.
    std::optional<std::filesystem::path> scenario;
    bool pace = true;
};

// Gateway, device, recorder and alert log in one process. Returns 0 when
// every stage is clean, 5 otherwise with the failing stage named on err.
int run_demo(const DemoOptions& options, std::ostream& out, std::ostream& err);

} // namespace cardiotel::tools
