#include "orderbkd/scorer_client.hpp"

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include "orderbkd/errors.hpp"

extern char** environ;

namespace orderbkd {

using nlohmann::json;

namespace {

std::string errno_text() { return std::strerror(errno); }

}  // namespace

ExternalScorer::ExternalScorer(int read_fd, int write_fd, int child_pid, std::string endpoint,
                               std::chrono::milliseconds timeout)
    : read_fd_(read_fd), write_fd_(write_fd), child_pid_(child_pid), endpoint_(std::move(endpoint)), timeout_(timeout) {}

ExternalScorer::~ExternalScorer() {
  if (write_fd_ >= 0) ::close(write_fd_);
  if (read_fd_ >= 0 && read_fd_ != write_fd_) ::close(read_fd_);
  if (child_pid_ > 0) {
    // Closing stdin asks the peer to exit; give it a moment, then insist.
    int status = 0;
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(child_pid_, &status, WNOHANG) == child_pid_) return;
      ::usleep(20000);
    }
    ::kill(child_pid_, SIGTERM);
    ::waitpid(child_pid_, &status, 0);
  }
}

std::shared_ptr<ExternalScorer> ExternalScorer::spawn(const std::vector<std::string>& argv,
                                                      std::chrono::milliseconds timeout) {
  if (argv.empty()) throw ValidationError("external scorer command is empty");
  std::signal(SIGPIPE, SIG_IGN);

  int to_child[2], from_child[2];
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw TransportError("pipe: " + errno_text());
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw TransportError("pipe: " + errno_text());
  }

  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
  posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);

  std::vector<char*> args;
  for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
  args.push_back(nullptr);

  pid_t pid = 0;
  const int rc = ::posix_spawnp(&pid, args[0], &actions, nullptr, args.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  ::close(to_child[0]);
  ::close(from_child[1]);
  if (rc != 0) {
    ::close(to_child[1]);
    ::close(from_child[0]);
    throw TransportError("cannot spawn '" + argv[0] + "': " + std::strerror(rc));
  }

  std::string endpoint = "spawn:" + argv[0];
  std::shared_ptr<ExternalScorer> peer(new ExternalScorer(from_child[0], to_child[1], pid, endpoint, timeout));
  peer->read_handshake();
  return peer;
}

std::shared_ptr<ExternalScorer> ExternalScorer::connect(const std::string& host, std::uint16_t port,
                                                        std::chrono::milliseconds timeout) {
  std::signal(SIGPIPE, SIG_IGN);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0) {
    throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  }
  int fd = -1;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("cannot connect to " + host + ":" + service);

  std::shared_ptr<ExternalScorer> peer(new ExternalScorer(fd, fd, -1, "tcp:" + host + ":" + service, timeout));
  peer->read_handshake();
  return peer;
}

std::string ExternalScorer::describe() const {
  std::string out = endpoint_;
  if (handshake_.contains("model")) out += ":" + handshake_["model"].dump();
  return out;
}

void ExternalScorer::send_line(const std::string& line) {
  std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(endpoint_ + ": write failed: " + errno_text());
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string ExternalScorer::read_line() {
  while (true) {
    if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
      std::string line = buffer_.substr(0, nl);
      buffer_.erase(0, nl + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      return line;
    }
    pollfd pfd{read_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(timeout_.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw TransportError(endpoint_ + ": poll failed: " + errno_text());
    }
    if (ready == 0) throw TransportError(endpoint_ + ": timed out waiting for the peer");
    char chunk[65536];
    const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(endpoint_ + ": read failed: " + errno_text());
    }
    if (n == 0) throw TransportError(endpoint_ + ": peer closed the connection");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
}

void ExternalScorer::read_handshake() {
  const std::string line = read_line();
  try {
    handshake_ = json::parse(line);
  } catch (const json::parse_error&) {
    throw TransportError(endpoint_ + ": handshake is not JSON: " + line);
  }
  if (!handshake_.is_object() || handshake_.value("protocol", "") != kProtocol ||
      !handshake_.contains("version") || handshake_["version"] != kVersion) {
    throw TransportError(endpoint_ + ": unexpected handshake " + line);
  }
}

std::vector<json> ExternalScorer::round_trip(std::vector<json> requests) {
  std::lock_guard lock(mutex_);
  std::map<std::int64_t, std::size_t> slot;
  std::vector<json> responses(requests.size());
  std::size_t sent = 0, received = 0;
  while (received < requests.size()) {
    // Bounded window: the peer can always make progress writing responses
    // while we wait, so neither pipe fills up on both sides at once.
    while (sent < requests.size() && slot.size() < kMaxInFlight) {
      const std::int64_t id = next_id_++;
      requests[sent]["id"] = id;
      slot[id] = sent;
      send_line(requests[sent].dump());
      ++sent;
    }
    const std::string line = read_line();
    json resp;
    try {
      resp = json::parse(line);
    } catch (const json::parse_error&) {
      throw TransportError(endpoint_ + ": malformed response: " + line);
    }
    if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_number_integer()) {
      throw TransportError(endpoint_ + ": response without id: " + line);
    }
    auto it = slot.find(resp["id"].get<std::int64_t>());
    if (it == slot.end()) throw TransportError(endpoint_ + ": response for unknown id: " + line);
    responses[it->second] = std::move(resp);
    slot.erase(it);
    ++received;
  }
  return responses;
}

namespace {

void raise_if_error(const json& resp) {
  if (resp.contains("error")) {
    throw ScorerError("scorer error for request " + resp["id"].dump() + ": " +
                      (resp["error"].is_string() ? resp["error"].get<std::string>() : resp["error"].dump()));
  }
}

}  // namespace

double ExternalScorer::logprob(std::span<const std::string> tokens) {
  Tokens t(tokens.begin(), tokens.end());
  return logprob_batch(std::span<const Tokens>(&t, 1)).front();
}

std::vector<double> ExternalScorer::logprob_batch(std::span<const Tokens> batch) {
  std::vector<json> reqs;
  reqs.reserve(batch.size());
  for (const auto& t : batch) reqs.push_back({{"op", "logprob"}, {"tokens", t}});
  std::vector<double> out;
  out.reserve(batch.size());
  for (const auto& resp : round_trip(std::move(reqs))) {
    raise_if_error(resp);
    if (!resp.contains("logprob") || !resp["logprob"].is_number()) {
      throw TransportError(endpoint_ + ": logprob response lacks a number: " + resp.dump());
    }
    const double lp = resp["logprob"].get<double>();
    if (!std::isfinite(lp) || lp > 0.0) {
      throw TransportError(endpoint_ + ": logprob must be finite and <= 0, got " + resp["logprob"].dump());
    }
    out.push_back(lp);
  }
  return out;
}

std::vector<double> ExternalScorer::embed(std::string_view text) {
  std::string t(text);
  return embed_batch(std::span<const std::string>(&t, 1)).front();
}

std::vector<std::vector<double>> ExternalScorer::embed_batch(std::span<const std::string> texts) {
  std::vector<json> reqs;
  reqs.reserve(texts.size());
  for (const auto& t : texts) reqs.push_back({{"op", "embed"}, {"text", t}});
  std::vector<std::vector<double>> out;
  out.reserve(texts.size());
  for (const auto& resp : round_trip(std::move(reqs))) {
    raise_if_error(resp);
    if (!resp.contains("vector") || !resp["vector"].is_array()) {
      throw TransportError(endpoint_ + ": embed response lacks a vector: " + resp.dump());
    }
    try {
      out.push_back(resp["vector"].get<std::vector<double>>());
    } catch (const json::exception&) {
      throw TransportError(endpoint_ + ": embed vector must hold numbers");
    }
  }
  return out;
}

}  // namespace orderbkd
