#pragma once

// Out-of-process scorer. The adapter is launched through /bin/sh and spoken
// to with newline-delimited JSON on its stdin/stdout:
//
//   -> {"type":"hello","version":1}
//   <- {"type":"ready","channels":C,"images":D,"metric":"miou"|"acc"|"neg_absrel"}
//   -> {"type":"score","id":n,"map":[...],"images":[...]|null}
//   <- {"type":"result","id":n,"aggregate":f,"per_image":[...]}
//    | {"type":"error","id":n,"message":str}
//   -> {"type":"bye"}, then stdin is closed.
//
// The adapter's stderr is inherited untouched.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "chsurgeon/error.hpp"
#include "chsurgeon/scorer.hpp"

namespace chsurgeon {

inline constexpr std::chrono::milliseconds kDefaultAdapterTimeout{300'000};

struct AdapterInfo {
  std::size_t channels = 0;
  std::size_t images = 0;
  std::string metric;
};

// One adapter process, one request in flight. Not thread-safe.
class ExternalScorerSession {
 public:
  ExternalScorerSession(const std::string& command, std::chrono::milliseconds timeout = kDefaultAdapterTimeout)
      : timeout_(timeout) {
    spawn(command);
    handshake();
  }

  ExternalScorerSession(const ExternalScorerSession&) = delete;
  ExternalScorerSession& operator=(const ExternalScorerSession&) = delete;

  ~ExternalScorerSession() { shutdown(); }

  const AdapterInfo& info() const { return info_; }

  ScoreResult score(const ChannelMap& map, ImageSubset subset = {}) {
    if (broken_) fail(ErrorCode::protocol_violation, "session is unusable after an earlier failure");
    if (map.size() != info_.channels) {
      fail(ErrorCode::length_mismatch, "map has " + std::to_string(map.size()) + " entries, adapter announced C = " +
                                           std::to_string(info_.channels));
    }
    const std::uint64_t id = ++last_id_;
    nlohmann::json request{{"type", "score"}, {"id", id}, {"map", map.entries()}};
    if (subset) {
      request["images"] = std::vector<std::size_t>(subset->begin(), subset->end());
    } else {
      request["images"] = nullptr;
    }
    send(request);
    const nlohmann::json reply = receive();
    try {
      const auto type = reply.at("type").get<std::string>();
      if (reply.at("id").get<std::uint64_t>() != id) {
        broken_ = true;
        fail(ErrorCode::protocol_violation, "reply id " + reply.at("id").dump() + " does not match request " +
                                                std::to_string(id));
      }
      if (type == "error") {
        fail(ErrorCode::protocol_violation, "adapter error: " + reply.value("message", std::string("(none)")));
      }
      if (type != "result") {
        broken_ = true;
        fail(ErrorCode::protocol_violation, "unexpected message type '" + type + "'");
      }
      ScoreResult result;
      result.aggregate = reply.at("aggregate").get<double>();
      result.per_image = reply.at("per_image").get<std::vector<double>>();
      return result;
    } catch (const nlohmann::json::exception& e) {
      broken_ = true;
      fail(ErrorCode::protocol_violation, std::string("malformed reply: ") + e.what());
    }
  }

 private:
  void spawn(const std::string& command) {
    // A dead adapter must surface as EPIPE, not kill the engine.
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) fail(ErrorCode::io_failure, "pipe: " + std::string(std::strerror(errno)));
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      fail(ErrorCode::io_failure, "pipe: " + std::string(std::strerror(errno)));
    }
    pid_ = ::fork();
    if (pid_ < 0) fail(ErrorCode::io_failure, "fork: " + std::string(std::strerror(errno)));
    if (pid_ == 0) {
      ::setpgid(0, 0);
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::setpgid(pid_, pid_);
    ::close(to_child[0]);
    ::close(from_child[1]);
    in_fd_ = to_child[1];
    out_fd_ = from_child[0];
  }

  void handshake() {
    send(nlohmann::json{{"type", "hello"}, {"version", 1}});
    const nlohmann::json ready = receive();
    try {
      if (ready.at("type").get<std::string>() != "ready") {
        broken_ = true;
        fail(ErrorCode::protocol_violation, "expected 'ready', got '" + ready.at("type").get<std::string>() + "'");
      }
      info_.channels = ready.at("channels").get<std::size_t>();
      info_.images = ready.at("images").get<std::size_t>();
      info_.metric = ready.at("metric").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      broken_ = true;
      fail(ErrorCode::protocol_violation, std::string("malformed ready message: ") + e.what());
    }
    if (info_.metric != "miou" && info_.metric != "acc" && info_.metric != "neg_absrel") {
      broken_ = true;
      fail(ErrorCode::protocol_violation, "unknown metric '" + info_.metric + "'");
    }
  }

  void send(const nlohmann::json& message) {
    const std::string line = message.dump() + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
      const ssize_t n = ::write(in_fd_, line.data() + written, line.size() - written);
      if (n < 0) {
        if (errno == EINTR) continue;
        broken_ = true;
        fail(ErrorCode::adapter_crash, "adapter stdin closed: " + std::string(std::strerror(errno)));
      }
      written += static_cast<std::size_t>(n);
    }
  }

  nlohmann::json receive() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
      if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
        const std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        try {
          return nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
          broken_ = true;
          fail(ErrorCode::protocol_violation, "adapter sent a non-JSON line: " + line.substr(0, 120));
        }
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        broken_ = true;
        fail(ErrorCode::timeout, "no reply from adapter within " + std::to_string(timeout_.count()) + " ms");
      }
      pollfd pfd{out_fd_, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (ready < 0) {
        if (errno == EINTR) continue;
        broken_ = true;
        fail(ErrorCode::io_failure, "poll: " + std::string(std::strerror(errno)));
      }
      if (ready == 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(out_fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        broken_ = true;
        fail(ErrorCode::adapter_crash, "read: " + std::string(std::strerror(errno)));
      }
      if (n == 0) {
        broken_ = true;
        fail(ErrorCode::adapter_crash, "adapter closed its stdout");
      }
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  void shutdown() noexcept {
    if (pid_ <= 0) return;
    if (!broken_) {
      try {
        send(nlohmann::json{{"type", "bye"}});
      } catch (...) {
      }
    }
    if (in_fd_ >= 0) ::close(in_fd_);
    if (out_fd_ >= 0) ::close(out_fd_);
    in_fd_ = out_fd_ = -1;
    // Give a well-behaved adapter a moment to exit before killing it.
    const auto grace = std::chrono::steady_clock::now() + std::chrono::milliseconds(broken_ ? 0 : 2000);
    int status = 0;
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (std::chrono::steady_clock::now() >= grace) {
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    pid_ = -1;
  }

  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  std::string buffer_;
  std::uint64_t last_id_ = 0;
  bool broken_ = false;
  AdapterInfo info_;
};

// Pool of adapter sessions behind the Scorer interface. Each concurrent
// caller borrows one session exclusively for the duration of a request.
// The cache argument of score() is only checked for shape; the adapter holds
// its own features.
class ExternalScorer final : public Scorer {
 public:
  ExternalScorer(const std::string& command, std::size_t sessions = 1,
                 std::chrono::milliseconds timeout = kDefaultAdapterTimeout) {
    if (sessions == 0) fail(ErrorCode::invalid_argument, "external scorer needs at least one session");
    for (std::size_t k = 0; k < sessions; ++k) {
      sessions_.push_back(std::make_unique<ExternalScorerSession>(command, timeout));
      const AdapterInfo& info = sessions_.back()->info();
      const AdapterInfo& first = sessions_.front()->info();
      if (info.channels != first.channels || info.images != first.images || info.metric != first.metric) {
        fail(ErrorCode::protocol_violation, "adapter sessions announced different shapes");
      }
      free_.push_back(sessions_.back().get());
    }
  }

  const AdapterInfo& info() const { return sessions_.front()->info(); }

  void check_compatible(const FeatureCache& cache) const {
    if (info().channels != cache.channels() || info().images != cache.images()) {
      fail(ErrorCode::protocol_violation,
           "adapter announced C=" + std::to_string(info().channels) + ", D=" + std::to_string(info().images) +
               " but cache has C=" + std::to_string(cache.channels()) + ", D=" + std::to_string(cache.images()));
    }
  }

  ScoreResult score(const FeatureCache& cache, const ChannelMap& map, ImageSubset subset = {}) const override {
    check_compatible(cache);
    ExternalScorerSession* session = acquire();
    try {
      ScoreResult r = session->score(map, subset);
      release(session);
      return r;
    } catch (...) {
      release(session);
      throw;
    }
  }

  std::string_view metric() const override { return info().metric; }

 private:
  ExternalScorerSession* acquire() const {
    std::unique_lock lock(mutex_);
    available_.wait(lock, [&] { return !free_.empty(); });
    ExternalScorerSession* s = free_.back();
    free_.pop_back();
    return s;
  }

  void release(ExternalScorerSession* s) const {
    {
      std::lock_guard lock(mutex_);
      free_.push_back(s);
    }
    available_.notify_one();
  }

  std::vector<std::unique_ptr<ExternalScorerSession>> sessions_;
  mutable std::vector<ExternalScorerSession*> free_;
  mutable std::mutex mutex_;
  mutable std::condition_variable available_;
};

}  // namespace chsurgeon
