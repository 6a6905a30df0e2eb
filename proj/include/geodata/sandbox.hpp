#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include "geodata/errors.hpp"
#include "geodata/prompting.hpp"
#include "geodata/registry.hpp"

// Runs generated programs in a child interpreter process: own process group,
// controlled environment, working directory confinement by convention, and a
// hard wall-clock timeout (kill on expiry). Secrets are substituted into the
// program text immediately before execution and never earlier, so prompts
// and cassettes stay shareable.
//
// Isolation is at the subprocess level only; there is no container or
// syscall filtering here, and network_allowed is policy metadata for the
// caller rather than an enforced barrier.

namespace geodata {

struct RuntimeConfig {
    std::vector<std::string> interpreter_command = {"python3"};
    std::string script_extension = ".py";
    double timeout_s = 300.0;
    std::filesystem::path working_dir;
    std::filesystem::path output_dir;
    std::map<std::string, std::string> env; // layered over PATH/HOME from the parent
    bool network_allowed = true;
    size_t capture_limit = 1 << 20; // bytes per stream
};

struct ProducedFile {
    std::string path; // absolute, under output_dir
    std::uintmax_t bytes = 0;
};

struct ExecutionResult {
    bool succeeded = false;
    int exit_code = -1;
    std::string stdout_text;
    std::string stderr_text;
    bool stdout_truncated = false;
    bool stderr_truncated = false;
    double duration_s = 0.0;
    std::vector<ProducedFile> produced_files;
    bool timed_out = false;
};

// Replaces every {{KEY:alias:key_name}} token with its secret; every other
// byte passes through untouched.
inline GeneratedProgram inject_secrets(const GeneratedProgram& program,
                                       const SecretStore& store) {
    GeneratedProgram out = program;
    std::string result;
    result.reserve(program.source_text.size());
    const std::string& text = program.source_text;
    auto begin = std::sregex_iterator(text.begin(), text.end(), detail::placeholder_pattern());
    size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
        result.append(text, last, static_cast<size_t>(it->position()) - last);
        result += store.resolve(it->str()); // MissingSecret on unbound tokens
        last = static_cast<size_t>(it->position() + it->length());
    }
    result.append(text, last, text.size() - last);
    out.source_text = std::move(result);
    return out;
}

namespace detail {

inline std::string find_executable(const std::string& command) {
    if (command.find('/') != std::string::npos) {
        return ::access(command.c_str(), X_OK) == 0 ? command : "";
    }
    const char* path_env = std::getenv("PATH");
    if (!path_env) return "";
    std::string path(path_env);
    size_t start = 0;
    while (start <= path.size()) {
        size_t end = path.find(':', start);
        if (end == std::string::npos) end = path.size();
        std::string candidate = path.substr(start, end - start);
        if (!candidate.empty()) {
            candidate += "/" + command;
            if (::access(candidate.c_str(), X_OK) == 0) return candidate;
        }
        start = end + 1;
    }
    return "";
}

struct FileStamp {
    std::uintmax_t size;
    std::filesystem::file_time_type mtime;
    friend bool operator==(const FileStamp&, const FileStamp&) = default;
};

inline std::map<std::string, FileStamp> snapshot_dir(const std::filesystem::path& dir) {
    std::map<std::string, FileStamp> out;
    std::error_code ec;
    for (auto it = std::filesystem::recursive_directory_iterator(dir, ec);
         it != std::filesystem::recursive_directory_iterator(); it.increment(ec)) {
        if (ec) break;
        if (!it->is_regular_file(ec)) continue;
        out[it->path().string()] = {it->file_size(ec), it->last_write_time(ec)};
    }
    return out;
}

inline std::vector<std::string> child_environment(const RuntimeConfig& config) {
    std::map<std::string, std::string> env;
    for (const char* keep : {"PATH", "HOME", "LANG", "LC_ALL", "PYTHONPATH"}) {
        if (const char* value = std::getenv(keep)) env[keep] = value;
    }
    for (const auto& [k, v] : config.env) env[k] = v;
    std::vector<std::string> flat;
    flat.reserve(env.size());
    for (const auto& [k, v] : env) flat.push_back(k + "=" + v);
    return flat;
}

} // namespace detail

inline ExecutionResult execute(const GeneratedProgram& program, const RuntimeConfig& config,
                               int attempt = 1) {
    namespace fs = std::filesystem;
    if (config.timeout_s <= 0) throw SandboxSetupError("timeout must be positive");
    if (config.interpreter_command.empty()) {
        throw SandboxSetupError("no interpreter command configured");
    }
    if (!fs::is_directory(config.working_dir)) {
        throw SandboxSetupError("working dir " + config.working_dir.string() +
                                " does not exist");
    }
    if (!fs::is_directory(config.output_dir)) {
        throw SandboxSetupError("output dir " + config.output_dir.string() +
                                " does not exist");
    }
    std::string interpreter = detail::find_executable(config.interpreter_command[0]);
    if (interpreter.empty()) {
        throw InterpreterMissing("interpreter '" + config.interpreter_command[0] +
                                 "' not found");
    }

    fs::path script = config.working_dir /
                      ("generated_step_" + std::to_string(attempt) + config.script_extension);
    {
        std::ofstream out(script, std::ios::binary);
        if (!out) throw SandboxSetupError("cannot write " + script.string());
        out << program.source_text;
    }

    auto before = detail::snapshot_dir(config.output_dir);

    int out_pipe[2], err_pipe[2], exec_pipe[2];
    if (::pipe(out_pipe) != 0 || ::pipe(err_pipe) != 0 || ::pipe(exec_pipe) != 0) {
        throw SandboxSetupError("pipe() failed");
    }
    ::fcntl(exec_pipe[1], F_SETFD, FD_CLOEXEC);

    std::vector<std::string> argv_storage = config.interpreter_command;
    argv_storage[0] = interpreter;
    argv_storage.push_back(script.string());
    std::vector<char*> argv;
    for (auto& arg : argv_storage) argv.push_back(arg.data());
    argv.push_back(nullptr);
    auto env_storage = detail::child_environment(config);
    std::vector<char*> envp;
    for (auto& var : env_storage) envp.push_back(var.data());
    envp.push_back(nullptr);

    auto start = std::chrono::steady_clock::now();
    pid_t pid = ::fork();
    if (pid < 0) throw SandboxSetupError("fork() failed");
    if (pid == 0) {
        ::setpgid(0, 0);
        ::close(exec_pipe[0]);
        if (::chdir(config.working_dir.c_str()) != 0) {
            char why = 'c';
            [[maybe_unused]] ssize_t n = ::write(exec_pipe[1], &why, 1);
            _exit(126);
        }
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::close(err_pipe[0]);
        ::close(err_pipe[1]);
        ::execve(interpreter.c_str(), argv.data(), envp.data());
        char why = 'x';
        [[maybe_unused]] ssize_t n = ::write(exec_pipe[1], &why, 1);
        _exit(127);
    }
    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    ::close(exec_pipe[1]);

    ExecutionResult result;
    auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                std::chrono::duration<double>(config.timeout_s));
    struct Stream {
        int fd;
        std::string* text;
        bool* truncated;
        bool open = true;
    };
    Stream streams[2] = {{out_pipe[0], &result.stdout_text, &result.stdout_truncated},
                         {err_pipe[0], &result.stderr_text, &result.stderr_truncated}};

    auto drain = [&](Stream& s) {
        char buf[65536];
        ssize_t n = ::read(s.fd, buf, sizeof buf);
        if (n > 0) {
            size_t room = config.capture_limit > s.text->size()
                              ? config.capture_limit - s.text->size()
                              : 0;
            size_t take = std::min(room, static_cast<size_t>(n));
            s.text->append(buf, take);
            if (take < static_cast<size_t>(n)) *s.truncated = true;
        } else if (n == 0) {
            ::close(s.fd);
            s.open = false;
        }
    };

    bool killed = false;
    while (streams[0].open || streams[1].open) {
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline && !killed) {
            ::kill(-pid, SIGKILL);
            killed = true;
        }
        struct pollfd fds[2];
        nfds_t nfds = 0;
        for (auto& s : streams) {
            if (s.open) fds[nfds++] = {s.fd, POLLIN, 0};
        }
        int wait_ms = killed ? 50
                             : static_cast<int>(std::chrono::duration_cast<
                                                    std::chrono::milliseconds>(deadline - now)
                                                    .count()) +
                                   1;
        wait_ms = std::clamp(wait_ms, 1, 200);
        int ready = ::poll(fds, nfds, wait_ms);
        if (ready <= 0) continue;
        for (auto& s : streams) {
            if (!s.open) continue;
            for (nfds_t i = 0; i < nfds; ++i) {
                if (fds[i].fd == s.fd && (fds[i].revents & (POLLIN | POLLHUP))) drain(s);
            }
        }
    }

    // Pipes are closed; wait for the child, enforcing the deadline.
    int status = 0;
    while (true) {
        pid_t reaped = ::waitpid(pid, &status, WNOHANG);
        if (reaped == pid) break;
        if (reaped < 0) break;
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline && !killed) {
            ::kill(-pid, SIGKILL);
            killed = true;
        }
        ::usleep(5000);
    }
    result.timed_out = killed;
    if (WIFEXITED(status)) {
        result.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        result.exit_code = 128 + WTERMSIG(status);
    }
    char spawn_error = 0;
    if (::read(exec_pipe[0], &spawn_error, 1) == 1) {
        ::close(exec_pipe[0]);
        if (spawn_error == 'x') {
            throw InterpreterMissing("interpreter failed to start: " + interpreter);
        }
        throw SandboxSetupError("could not enter working dir " +
                                config.working_dir.string());
    }
    ::close(exec_pipe[0]);
    result.duration_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.succeeded = !result.timed_out && result.exit_code == 0;

    auto after = detail::snapshot_dir(config.output_dir);
    for (const auto& [path, stamp] : after) {
        auto it = before.find(path);
        if (it == before.end() || !(it->second == stamp)) {
            result.produced_files.push_back({path, stamp.size});
        }
    }
    return result;
}

} // namespace geodata
