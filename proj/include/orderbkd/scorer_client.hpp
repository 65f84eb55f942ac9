#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "orderbkd/corpus.hpp"

namespace orderbkd {

/// Client side of the external scorer protocol: newline-delimited JSON over
/// the stdio of a spawned process or a TCP stream.
///
///   peer -> {"protocol": "orderbkd-scorer", "version": 1, ...metadata}
///   {"id": N, "op": "logprob", "tokens": [...]} -> {"id": N, "logprob": x}
///   {"id": N, "op": "embed", "text": "..."}     -> {"id": N, "vector": [...]}
///   failures                                     -> {"id": N, "error": "..."}
///
/// Responses may arrive out of order and are matched by id. Requests on one
/// connection are serialized; open more connections for parallel scoring.
class ExternalScorer {
 public:
  static constexpr std::string_view kProtocol = "orderbkd-scorer";
  static constexpr int kVersion = 1;
  /// Requests outstanding at once on one connection.
  static constexpr std::size_t kMaxInFlight = 16;

  /// Spawns `argv` and speaks the protocol over its stdin/stdout.
  static std::shared_ptr<ExternalScorer> spawn(const std::vector<std::string>& argv,
                                               std::chrono::milliseconds timeout = std::chrono::seconds(120));
  static std::shared_ptr<ExternalScorer> connect(const std::string& host, std::uint16_t port,
                                                 std::chrono::milliseconds timeout = std::chrono::seconds(120));

  ~ExternalScorer();
  ExternalScorer(const ExternalScorer&) = delete;
  ExternalScorer& operator=(const ExternalScorer&) = delete;

  double logprob(std::span<const std::string> tokens);
  std::vector<double> logprob_batch(std::span<const Tokens> batch);
  std::vector<double> embed(std::string_view text);
  std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts);

  /// The handshake object sent by the peer, including any metadata.
  const nlohmann::json& handshake() const noexcept { return handshake_; }
  std::string describe() const;

 private:
  ExternalScorer(int read_fd, int write_fd, int child_pid, std::string endpoint, std::chrono::milliseconds timeout);

  void read_handshake();
  void send_line(const std::string& line);
  std::string read_line();
  /// Pipelines requests (bounded window) and collects one response per id.
  std::vector<nlohmann::json> round_trip(std::vector<nlohmann::json> requests);

  int read_fd_;
  int write_fd_;
  int child_pid_;
  std::string endpoint_;
  std::chrono::milliseconds timeout_;
  std::string buffer_;
  nlohmann::json handshake_;
  std::int64_t next_id_ = 1;
  std::mutex mutex_;
};

}  // namespace orderbkd
