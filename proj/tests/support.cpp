#include "support.h"

#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <cstring>
#include <fcntl.h>
#include <fstream>
#include <poll.h>
#include <sstream>
#include <stdexcept>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace testsupport {

namespace fs = std::filesystem;

TempDir::TempDir() {
    std::string tmpl = (fs::temp_directory_path() / "cardiotel-test-XXXXXX").string();
    if (!mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
}

std::string read_file(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& file, const std::string& content) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << content;
}

fs::path source_dir() { return CARDIOTEL_SOURCE_DIR; }
fs::path cli_path() { return CARDIOTEL_CLI; }
fs::path table3_csv() { return source_dir() / "fixtures" / "table3.csv"; }

namespace {

std::vector<char*> c_argv(const std::vector<std::string>& argv) {
    std::vector<char*> out;
    for (const auto& a : argv) out.push_back(const_cast<char*>(a.c_str()));
    out.push_back(nullptr);
    return out;
}

void apply_env(const std::vector<std::string>& env) {
    for (const auto& kv : env) {
        const auto eq = kv.find('=');
        setenv(kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str(), 1);
    }
}

} // namespace

CommandResult run(const std::vector<std::string>& argv, const std::vector<std::string>& env) {
    int out_pipe[2], err_pipe[2];
    if (pipe(out_pipe) != 0 || pipe(err_pipe) != 0) throw std::runtime_error("pipe failed");
    const pid_t pid = fork();
    if (pid == 0) {
        dup2(out_pipe[1], 1);
        dup2(err_pipe[1], 2);
        close(out_pipe[0]);
        close(err_pipe[0]);
        apply_env(env);
        auto args = c_argv(argv);
        execv(args[0], args.data());
        _exit(127);
    }
    close(out_pipe[1]);
    close(err_pipe[1]);
    CommandResult r;
    pollfd fds[2] = {{out_pipe[0], POLLIN, 0}, {err_pipe[0], POLLIN, 0}};
    int open_fds = 2;
    char buf[4096];
    while (open_fds > 0) {
        if (poll(fds, 2, -1) < 0) {
            if (errno == EINTR) continue;
            break;
        }
        for (int i = 0; i < 2; ++i) {
            if (fds[i].fd < 0 || !(fds[i].revents & (POLLIN | POLLHUP))) continue;
            const ssize_t n = read(fds[i].fd, buf, sizeof buf);
            if (n <= 0) {
                close(fds[i].fd);
                fds[i].fd = -1;
                --open_fds;
            } else {
                (i == 0 ? r.out : r.err).append(buf, static_cast<std::size_t>(n));
            }
        }
    }
    int status = 0;
    waitpid(pid, &status, 0);
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    return r;
}

Child::Child(const std::vector<std::string>& argv, const std::vector<std::string>& env) {
    int out_pipe[2];
    if (pipe(out_pipe) != 0) throw std::runtime_error("pipe failed");
    pid_ = fork();
    if (pid_ == 0) {
        dup2(out_pipe[1], 1);
        close(out_pipe[0]);
        const int devnull = open("/dev/null", O_WRONLY);
        dup2(devnull, 2);
        apply_env(env);
        auto args = c_argv(argv);
        execv(args[0], args.data());
        _exit(127);
    }
    close(out_pipe[1]);
    out_fd_ = out_pipe[0];
}

Child::~Child() {
    if (!reaped_) {
        kill_hard();
        wait();
    }
    if (out_fd_ >= 0) close(out_fd_);
}

std::string Child::read_line(int timeout_ms) {
    for (;;) {
        const auto nl = buf_.find('\n');
        if (nl != std::string::npos) {
            std::string line = buf_.substr(0, nl);
            buf_.erase(0, nl + 1);
            return line;
        }
        pollfd pfd{out_fd_, POLLIN, 0};
        if (poll(&pfd, 1, timeout_ms) <= 0) return {};
        char chunk[1024];
        const ssize_t n = read(out_fd_, chunk, sizeof chunk);
        if (n <= 0) return {};
        buf_.append(chunk, static_cast<std::size_t>(n));
    }
}

void Child::kill_hard() {
    if (!reaped_ && pid_ > 0) ::kill(pid_, SIGKILL);
}

int Child::wait() {
    if (!reaped_ && pid_ > 0) {
        waitpid(pid_, &status_, 0);
        reaped_ = true;
    }
    return status_;
}

const std::vector<Table4Row>& table4() {
    static const std::vector<Table4Row> rows = {
        {1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},  {2, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
        {3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},  {4, 0, 0, 0, 5, 0, 0, 0, 0, 0, 0, 0},
        {5, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},  {6, 0, 1, 3, 5, 2, 0, 0, 0, 0, 0, 0},
        {7, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},  {8, 0, 0, 0, 5, 3, 0, 0, 0, 0, 0, 0},
        {9, 0, 0, 0, 3, 0, 0, 0, 0, 0, 0, 0},  {10, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0},
        {11, 1, 1, 3, 0, 0, 0, 0, 0, 0, 0, 0}, {12, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0},
        {13, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0}, {14, 0, 1, 0, 5, 3, 0, 0, 0, 0, 0, 0},
        {15, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0}, {16, 0, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0},
        {17, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0}, {18, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0},
        {19, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0}, {20, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0},
    };
    return rows;
}

const std::vector<Table5Row>& table5() {
    static const std::vector<Table5Row> rows = {
        {"Oxygen Saturation", 20, 17, 0, 3}, {"Body Temperature", 20, 15, 0, 5},
        {"Systolic BP", 20, 15, 0, 5},       {"Diastolic BP", 20, 14, 0, 6},
        {"Heart Rate", 20, 16, 0, 4},        {"ECG", 20, 20, 0, 0},
    };
    return rows;
}

} // namespace testsupport
