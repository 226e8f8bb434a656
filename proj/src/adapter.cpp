#include "triage/adapter.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstdlib>
#include <thread>

#include "triage/error.hpp"

namespace triage {

namespace {

struct Pipe {
  int fd[2] = {-1, -1};
  Pipe() {
    if (::pipe(fd) != 0) throw Error(ErrorCode::kAdapterFailure, "pipe() failed");
  }
  ~Pipe() {
    close_read();
    close_write();
  }
  void close_read() {
    if (fd[0] >= 0) ::close(fd[0]);
    fd[0] = -1;
  }
  void close_write() {
    if (fd[1] >= 0) ::close(fd[1]);
    fd[1] = -1;
  }
};

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    auto n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      return;  // reader went away; exit status reports the failure
    }
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace

std::vector<std::string> run_adapter(const std::string& command, const std::string& mode,
                                     const std::vector<std::string>& requests) {
  Pipe to_child;
  Pipe from_child;
  // A dead adapter must not kill us on write.
  std::signal(SIGPIPE, SIG_IGN);

  pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorCode::kAdapterFailure, "fork() failed");
  if (pid == 0) {
    ::dup2(to_child.fd[0], STDIN_FILENO);
    ::dup2(from_child.fd[1], STDOUT_FILENO);
    ::close(to_child.fd[0]);
    ::close(to_child.fd[1]);
    ::close(from_child.fd[0]);
    ::close(from_child.fd[1]);
    ::setenv("TRIAGE_ADAPTER_MODE", mode.c_str(), 1);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  to_child.close_read();
  from_child.close_write();

  std::string payload;
  for (const auto& r : requests) {
    payload += r;
    payload += '\n';
  }
  std::thread writer([&] {
    write_all(to_child.fd[1], payload);
    to_child.close_write();
  });

  std::string output;
  char buf[65536];
  for (;;) {
    auto n = ::read(from_child.fd[0], buf, sizeof(buf));
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    output.append(buf, static_cast<std::size_t>(n));
  }
  writer.join();

  int status = 0;
  while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
  }
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw Error(ErrorCode::kAdapterFailure,
                "adapter '" + command + "' failed in " + mode + " mode");
  }

  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < output.size()) {
    auto end = output.find('\n', start);
    if (end == std::string::npos) end = output.size();
    if (end > start) lines.push_back(output.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

}  // namespace triage
