#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <sys/types.h>
#include <vector>

#include "cardiotel/error.h"

namespace testsupport {

// Directory removed on destruction.
class TempDir {
public:
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& file);
void write_file(const std::filesystem::path& file, const std::string& content);

std::filesystem::path source_dir();
std::filesystem::path cli_path();
std::filesystem::path table3_csv();

struct CommandResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

// Runs argv directly (no shell), capturing stdout and stderr.
CommandResult run(const std::vector<std::string>& argv, const std::vector<std::string>& env = {});

// A child process whose stdout is readable line by line.
class Child {
public:
    explicit Child(const std::vector<std::string>& argv, const std::vector<std::string>& env = {});
    ~Child();
    Child(const Child&) = delete;
    Child& operator=(const Child&) = delete;

    // Next stdout line, empty on EOF or timeout.
    std::string read_line(int timeout_ms);
    void kill_hard();
    int wait();
    pid_t pid() const { return pid_; }

private:
    pid_t pid_ = -1;
    int out_fd_ = -1;
    std::string buf_;
    bool reaped_ = false;
    int status_ = 0;
};

// Published difference table: ID then SpO2, Temp, S_BP, D_BP, HR, ECG, P, Q, R, S, T.
using Table4Row = std::array<int, 12>;
const std::vector<Table4Row>& table4();

struct Table5Row {
    std::string metric;
    int total, exact, incorrect, near;
};
const std::vector<Table5Row>& table5();

// Code of the cardiotel::Error thrown by f, or nullopt if it returned.
inline std::optional<cardiotel::ErrorCode> code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const cardiotel::Error& e) {
        return e.code();
    }
    return std::nullopt;
}

} // namespace testsupport
