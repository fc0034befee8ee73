// SPDX-License-Identifier: Apache-2.0
#include "tabflow/sandbox.hpp"

#include "tabflow/error.hpp"
#include "tabflow/text_util.hpp"

#include <json.hpp>

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/mount.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace tabflow {

std::string_view to_string(ExecStatus s) {
  switch (s) {
  case ExecStatus::Ok: return "Ok";
  case ExecStatus::RuntimeError: return "RuntimeError";
  case ExecStatus::Timeout: return "Timeout";
  case ExecStatus::OutputTruncated: return "OutputTruncated";
  }
  return "Unknown";
}

std::vector<std::string> SandboxConfig::parse_command(std::string_view tmpl) {
  std::vector<std::string> argv;
  std::string cur;
  for (char c : tmpl) {
    if (c == ' ' || c == '\t') {
      if (!cur.empty()) argv.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) argv.push_back(std::move(cur));
  if (argv.empty()) throw Error(ErrorCode::InvalidArgument, "empty sandbox command");
  if (std::find(argv.begin(), argv.end(), "{file}") == argv.end()) argv.push_back("{file}");
  return argv;
}

namespace {

std::size_t default_slots(std::size_t requested) {
  if (requested) return std::min<std::size_t>(requested, 4096);
  auto hw = std::thread::hardware_concurrency();
  return hw ? hw : 1;
}

class Fd {
public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    reset();
    fd_ = std::exchange(o.fd_, -1);
    return *this;
  }
  ~Fd() { reset(); }
  int get() const { return fd_; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

private:
  int fd_ = -1;
};

std::pair<Fd, Fd> make_pipe(int flags = 0) {
  int p[2];
  if (::pipe2(p, flags) != 0)
    throw Error(ErrorCode::SetupError, std::string("pipe: ") + std::strerror(errno));
  return {Fd(p[0]), Fd(p[1])};
}

struct WorkDir {
  fs::path path;
  explicit WorkDir(const fs::path& root) {
    fs::create_directories(root);
    std::string tmpl = (root / "run-XXXXXX").string();
    if (!::mkdtemp(tmpl.data()))
      throw Error(ErrorCode::SetupError, std::string("mkdtemp: ") + std::strerror(errno));
    path = tmpl;
  }
  ~WorkDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Cuts at `limit` bytes on a UTF-8 boundary and appends a marker so the
// result never exceeds the limit.
std::string finish_output(std::string s, std::size_t limit, bool& truncated) {
  if (s.size() <= limit && !truncated) return s;
  truncated = true;
  const std::string marker = "\n[output truncated at " + std::to_string(limit / 1024) + " KB]\n";
  std::size_t keep = limit > marker.size() ? limit - marker.size() : 0;
  keep = std::min(keep, s.size());
  while (keep > 0 && keep < s.size() && (static_cast<unsigned char>(s[keep]) & 0xC0) == 0x80) --keep;
  s.resize(keep);
  return s + marker;
}

void write_file(const fs::path& p, std::string_view content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::SetupError, "cannot write " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

std::set<std::string> list_files(const fs::path& root) {
  std::set<std::string> out;
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(root, ec); it != fs::recursive_directory_iterator();
       it.increment(ec)) {
    if (ec) break;
    if (it->is_regular_file(ec)) out.insert(fs::relative(it->path(), root, ec).string());
  }
  return out;
}

std::string sanitize(std::string_view name) {
  std::string out;
  for (char c : name)
    out.push_back(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_');
  return out.empty() ? "table" : out;
}

void set_limit(int resource, rlim_t value) {
  struct rlimit rl {value, value};
  ::setrlimit(resource, &rl);
}

using Clock = std::chrono::steady_clock;

// Mount points of the current namespace, unescaped, outermost first.
std::vector<std::string> mount_points() {
  std::vector<std::string> out;
  std::ifstream in("/proc/self/mountinfo");
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string id, parent, dev, root, mnt;
    if (!(fields >> id >> parent >> dev >> root >> mnt)) continue;
    std::string path;
    for (std::size_t i = 0; i < mnt.size(); ++i) {
      if (mnt[i] == '\\' && i + 3 < mnt.size()) {
        path.push_back(static_cast<char>(std::stoi(mnt.substr(i + 1, 3), nullptr, 8)));
        i += 3;
      } else {
        path.push_back(mnt[i]);
      }
    }
    out.push_back(std::move(path));
  }
  return out;
}

bool probe_unshare(int flags) {
  pid_t pid = ::fork();
  if (pid == 0) _exit(::unshare(flags) == 0 ? 0 : 1);
  if (pid < 0) return false;
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) && WEXITSTATUS(status) == 0;
}

// Runs in the forked child: only system calls on pre-built strings.
bool confine_filesystem(const std::string& workdir, const std::vector<std::string>& mounts) {
  if (::mount(nullptr, "/", nullptr, MS_REC | MS_PRIVATE, nullptr) != 0) return false;
  if (::mount(workdir.c_str(), workdir.c_str(), nullptr, MS_BIND | MS_REC, nullptr) != 0) return false;
  bool ok = true;
  for (const auto& m : mounts) {
    if (::mount(nullptr, m.c_str(), nullptr, MS_BIND | MS_REMOUNT | MS_RDONLY, nullptr) != 0) {
      // Keep whatever per-mount flags the kernel insists on.
      if (::mount(nullptr, m.c_str(), nullptr, MS_BIND | MS_REMOUNT | MS_RDONLY | MS_NOSUID | MS_NODEV | MS_NOEXEC,
                  nullptr) != 0 &&
          m == "/")
        ok = false;
    }
  }
  return ok;
}

} // namespace

Sandbox::Sandbox(SandboxConfig cfg)
    : cfg_(std::move(cfg)), slots_(static_cast<std::ptrdiff_t>(default_slots(cfg_.max_concurrent))) {
  if (cfg_.command.empty()) throw Error(ErrorCode::InvalidArgument, "empty sandbox command");
}

bool Sandbox::network_isolation_available() {
  std::call_once(netns_once_, [this] { netns_ok_ = probe_unshare(CLONE_NEWNET); });
  return netns_ok_;
}

bool Sandbox::filesystem_isolation_available() {
  std::call_once(mntns_once_, [this] { mntns_ok_ = probe_unshare(CLONE_NEWNS); });
  return mntns_ok_;
}

ToolResult Sandbox::execute(const ExecRequest& req) {
  if (req.code.empty()) throw Error(ErrorCode::InvalidArgument, "code must be non-empty");
  if (req.time_limit <= 0 || req.memory_limit_mb == 0 || req.output_limit_kb == 0)
    throw Error(ErrorCode::InvalidArgument, "sandbox limits must be positive");
  for (const auto& [name, path] : req.tables)
    if (!fs::is_regular_file(path)) throw Error(ErrorCode::SetupError, "table file missing: " + path);

  if (!slots_.try_acquire_for(cfg_.queue_timeout))
    throw Error(ErrorCode::SandboxBusy, "all sandbox slots are busy");
  struct Release {
    std::counting_semaphore<4096>& s;
    ~Release() { s.release(); }
  } release{slots_};

  const bool netns = cfg_.isolate_network && network_isolation_available();
  const bool mntns = cfg_.isolate_filesystem && filesystem_isolation_available();
  WorkDir wd(cfg_.work_root);
  const fs::path source = wd.path / cfg_.source_name;
  write_file(source, req.code);

  std::vector<std::string> env{
      "PATH=" + std::string(std::getenv("PATH") ? std::getenv("PATH") : "/usr/bin:/bin"),
      "HOME=" + wd.path.string(),
      "TMPDIR=" + wd.path.string(),
      "MPLCONFIGDIR=" + wd.path.string(),
      "LANG=C.UTF-8",
      "PYTHONDONTWRITEBYTECODE=1",
      "PYTHONUNBUFFERED=1",
      "OPENBLAS_NUM_THREADS=1",
      "OMP_NUM_THREADS=1",
  };
  std::vector<std::string> names;
  if (!req.tables.empty()) fs::create_directories(wd.path / "tables");
  for (std::size_t i = 0; i < req.tables.size(); ++i) {
    const auto& [name, path] = req.tables[i];
    fs::path copy = wd.path / "tables" / (std::to_string(i) + "_" + sanitize(name) + ".csv");
    fs::copy_file(path, copy, fs::copy_options::overwrite_existing);
    env.push_back("TABLE_PATH_" + std::to_string(i) + "=" + fs::absolute(copy).string());
    names.push_back(name);
  }
  env.push_back("TABLE_NAMES=" + text::join(names, ","));
  const auto initial_files = list_files(wd.path);

  std::vector<std::string> argv = cfg_.command;
  for (auto& a : argv)
    if (a == "{file}") a = source.string();

  std::vector<char*> argv_c, env_c;
  for (auto& a : argv) argv_c.push_back(a.data());
  argv_c.push_back(nullptr);
  for (auto& e : env) env_c.push_back(e.data());
  env_c.push_back(nullptr);

  auto [out_r, out_w] = make_pipe(O_CLOEXEC);
  auto [err_r, err_w] = make_pipe(O_CLOEXEC);
  auto [exec_r, exec_w] = make_pipe(O_CLOEXEC);

  const auto mem_bytes = static_cast<rlim_t>(req.memory_limit_mb) * 1024 * 1024;
  const auto cpu_secs = static_cast<rlim_t>(std::ceil(req.time_limit + cfg_.grace)) + 1;
  const auto fsize = static_cast<rlim_t>(cfg_.max_file_mb) * 1024 * 1024;
  const std::string workdir = fs::canonical(wd.path).string();
  std::vector<std::string> mounts;
  if (mntns)
    for (auto& m : mount_points())
      if (m != workdir && m.rfind(workdir + "/", 0) != 0) mounts.push_back(std::move(m));

  const auto start = Clock::now();
  pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorCode::SetupError, std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::setpgid(0, 0);
    if (netns || mntns) {
      if (::unshare((netns ? CLONE_NEWNET : 0) | (mntns ? CLONE_NEWNS : 0)) != 0 ||
          (mntns && !confine_filesystem(workdir, mounts))) {
        int e = errno ? errno : EPERM;
        [[maybe_unused]] auto n = ::write(exec_w.get(), &e, sizeof(e));
        _exit(127);
      }
    }
    ::dup2(out_w.get(), STDOUT_FILENO);
    ::dup2(err_w.get(), STDERR_FILENO);
    int devnull = ::open("/dev/null", O_RDONLY);
    if (devnull >= 0) ::dup2(devnull, STDIN_FILENO);
    if (::chdir(workdir.c_str()) != 0) _exit(126);
    set_limit(RLIMIT_AS, mem_bytes);
    set_limit(RLIMIT_CPU, cpu_secs);
    set_limit(RLIMIT_FSIZE, fsize);
    set_limit(RLIMIT_CORE, 0);
    ::execvpe(argv_c[0], argv_c.data(), env_c.data());
    int e = errno;
    [[maybe_unused]] auto n = ::write(exec_w.get(), &e, sizeof(e));
    _exit(127);
  }
  ::setpgid(pid, pid);
  out_w.reset();
  err_w.reset();
  exec_w.reset();

  int exec_errno = 0;
  if (::read(exec_r.get(), &exec_errno, sizeof(exec_errno)) == sizeof(exec_errno)) {
    ::waitpid(pid, nullptr, 0);
    throw Error(ErrorCode::SetupError,
                "cannot start interpreter '" + argv[0] + "' in isolation: " + std::strerror(exec_errno));
  }

  const std::size_t limit = req.output_limit_kb * 1024;
  std::string out_buf, err_buf;
  bool out_trunc = false, err_trunc = false;
  auto soft_deadline = start + std::chrono::duration_cast<Clock::duration>(
                                   std::chrono::duration<double>(req.time_limit));
  auto hard_deadline = soft_deadline + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(cfg_.grace));
  bool timed_out = false, term_sent = false, kill_sent = false;
  bool out_open = true, err_open = true, reaped = false;
  int status = 0;

  auto drain = [&](int fd, std::string& buf, bool& trunc, bool& open) {
    char chunk[8192];
    ssize_t n = ::read(fd, chunk, sizeof(chunk));
    if (n <= 0) {
      open = false;
      return;
    }
    // keep one byte past the limit so truncation is detectable
    if (buf.size() <= limit) buf.append(chunk, std::min<std::size_t>(n, limit + 1 - buf.size()));
    if (buf.size() > limit) trunc = true;
  };

  while (out_open || err_open || !reaped) {
    auto now = Clock::now();
    if (!term_sent && now >= soft_deadline) {
      timed_out = true;
      term_sent = true;
      ::kill(-pid, SIGTERM);
    }
    if (term_sent && !kill_sent && now >= hard_deadline) {
      kill_sent = true;
      ::kill(-pid, SIGKILL);
    }
    if (!reaped) {
      pid_t w = ::waitpid(pid, &status, WNOHANG);
      if (w == pid) {
        reaped = true;
        // stray grandchildren would keep the pipes open
        ::kill(-pid, SIGKILL);
      }
    }
    pollfd fds[2];
    nfds_t nfds = 0;
    if (out_open) fds[nfds++] = {out_r.get(), POLLIN, 0};
    if (err_open) fds[nfds++] = {err_r.get(), POLLIN, 0};
    if (nfds == 0) {
      if (!reaped) std::this_thread::sleep_for(std::chrono::milliseconds(5));
      continue;
    }
    int rc = ::poll(fds, nfds, 20);
    if (rc <= 0) continue;
    for (nfds_t k = 0; k < nfds; ++k) {
      if (!(fds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      if (fds[k].fd == out_r.get())
        drain(out_r.get(), out_buf, out_trunc, out_open);
      else
        drain(err_r.get(), err_buf, err_trunc, err_open);
    }
  }
  const auto end = Clock::now();

  ToolResult result;
  result.duration = std::chrono::duration<double>(end - start).count();
  result.stdout_text = finish_output(std::move(out_buf), limit, out_trunc);
  result.stderr_text = finish_output(std::move(err_buf), limit, err_trunc);
  if (WIFEXITED(status))
    result.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status))
    result.exit_code = 128 + WTERMSIG(status);

  if (timed_out) {
    result.status = ExecStatus::Timeout;
    if (!result.stderr_text.empty() && result.stderr_text.back() != '\n') result.stderr_text += '\n';
    result.stderr_text += "execution exceeded the time limit of " +
                          text::format_number(req.time_limit) + " s";
  } else if (result.exit_code != 0) {
    result.status = ExecStatus::RuntimeError;
  } else if (out_trunc || err_trunc) {
    result.status = ExecStatus::OutputTruncated;
  }

  for (const auto& f : list_files(wd.path)) {
    if (initial_files.count(f)) continue;
    result.artifacts.push_back(f);
    if (req.artifact_dir) {
      auto dest = *req.artifact_dir / f;
      fs::create_directories(dest.parent_path());
      fs::copy_file(wd.path / f, dest, fs::copy_options::overwrite_existing);
    }
  }
  return result;
}

nlohmann::json Sandbox::health_check() {
  nlohmann::json report;
  ExecRequest probe;
  probe.code = cfg_.noop_code;
  probe.time_limit = 10;
  auto r = execute(probe);
  if (r.status != ExecStatus::Ok)
    throw Error(ErrorCode::SetupError, "no-op program failed: " + r.stderr_text);

  // Interpreter version via "--version"; best effort.
  std::string version;
  {
    auto [rd, wr] = make_pipe(O_CLOEXEC);
    pid_t pid = ::fork();
    if (pid == 0) {
      ::dup2(wr.get(), STDOUT_FILENO);
      ::dup2(wr.get(), STDERR_FILENO);
      ::execlp(cfg_.command[0].c_str(), cfg_.command[0].c_str(), "--version", nullptr);
      _exit(127);
    }
    wr.reset();
    char buf[256];
    ssize_t n;
    while ((n = ::read(rd.get(), buf, sizeof(buf))) > 0) version.append(buf, n);
    ::waitpid(pid, nullptr, 0);
  }

  report["status"] = "ok";
  report["interpreter"] = cfg_.command;
  report["interpreter_version"] = std::string(text::trim(version));
  report["noop_duration"] = r.duration;
  report["limits"] = {{"time_limit", ExecRequest{}.time_limit},
                      {"memory_limit_mb", ExecRequest{}.memory_limit_mb},
                      {"output_limit_kb", ExecRequest{}.output_limit_kb},
                      {"grace", cfg_.grace},
                      {"max_file_mb", cfg_.max_file_mb},
                      {"max_concurrent", default_slots(cfg_.max_concurrent)}};
  report["isolation"] = {{"network_namespace", cfg_.isolate_network && network_isolation_available()},
                         {"read_only_filesystem", cfg_.isolate_filesystem && filesystem_isolation_available()},
                         {"process_group_kill", true},
                         {"rlimits", true},
                         {"fresh_workdir", true}};
  return report;
}

} // namespace tabflow
