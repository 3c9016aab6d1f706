#include "acceptance/serve_process.hpp"

#include <cerrno>
#include <cstring>
#include <regex>
#include <stdexcept>
#include <vector>

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace sbpm::acceptance {

namespace {

// First stdout line of the child, within the timeout.
std::string read_line(int fd, int timeout_ms) {
    std::string line;
    char c;
    while (true) {
        pollfd p{fd, POLLIN, 0};
        int r = ::poll(&p, 1, timeout_ms);
        if (r <= 0) throw std::runtime_error("serve: no banner within " + std::to_string(timeout_ms) + " ms");
        ssize_t n = ::read(fd, &c, 1);
        if (n <= 0) throw std::runtime_error("serve: exited before printing its banner: " + line);
        if (c == '\n') return line;
        line.push_back(c);
    }
}

}  // namespace

ServeProcess::ServeProcess(const std::string& node_id, const std::filesystem::path& data_dir,
                           const std::optional<std::string>& join) {
    std::vector<std::string> args{SBPM_CLI_PATH, "serve",         "--listen", "127.0.0.1:0", "--node-id",
                                  node_id,       "--data-dir", data_dir.string()};
    if (join) {
        args.push_back("--join");
        args.push_back(*join);
    }
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);

    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error(std::string("pipe: ") + std::strerror(errno));
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    posix_spawn_file_actions_addclose(&actions, fds[0]);
    posix_spawn_file_actions_addclose(&actions, fds[1]);
    int rc = ::posix_spawn(&pid_, SBPM_CLI_PATH, &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(fds[1]);
    if (rc != 0) {
        ::close(fds[0]);
        throw std::runtime_error(std::string("posix_spawn: ") + std::strerror(rc));
    }
    std::string banner;
    try {
        banner = read_line(fds[0], 10'000);
    } catch (...) {
        ::close(fds[0]);
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
        throw;
    }
    out_fd_ = fds[0];  // kept open so later writes by the child do not raise SIGPIPE
    std::smatch m;
    static const std::regex kBanner(R"(listening on [^ ]+:(\d+) wire)");
    if (!std::regex_search(banner, m, kBanner)) {
        this->~ServeProcess();
        throw std::runtime_error("serve: unexpected banner: " + banner);
    }
    port_ = std::stoi(m[1]);
}

ServeProcess::~ServeProcess() {
    if (pid_ <= 0) return;
    ::kill(pid_, SIGTERM);
    ::waitpid(pid_, nullptr, 0);
    if (out_fd_ >= 0) ::close(out_fd_);
}

}  // namespace sbpm::acceptance
