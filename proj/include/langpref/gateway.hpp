#pragma once

// Live-session service for the improvement and reward-learning loops.
// Sessions are event-sourced: every accepted request becomes one log event and
// all state is the fold of those events, so a log replays to the same state.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "langpref/improver.hpp"
#include "langpref/rewardlab.hpp"
#include "langpref/serialization.hpp"

namespace httplib {
class Server;
}

namespace langpref::gateway {

enum class Mode { Improve, LearnLanguage, LearnComparison };
const char* mode_name(Mode m);
std::optional<Mode> mode_from_name(const std::string& name);

struct GatewayConfig {
  int improve_max_iterations = 10;
  int learn_max_iterations = 20;
  int rate_every = 5;
  std::optional<world::FeatureVector> reference_w;  // defines the suboptimal start subset
  improve::ImproverConfig improver;
  reward::RewardConfig reward;
  std::uint64_t seed = 0;
  std::string config_digest;
  std::filesystem::path log_dir;  // empty keeps logs in memory only

  void validate() const;
};

/// Read-only after construction; shared by every session.
struct Assets {
  world::TrajectoryPool pool;
  lang::Catalog catalog;
  latent::EncoderPair encoders;
};

/// Request failure with an HTTP status and a machine-readable code.
class ApiError : public std::runtime_error {
 public:
  ApiError(int status, std::string code, const std::string& message)
      : std::runtime_error(message), status_(status), code_(std::move(code)) {}
  int status() const { return status_; }
  const std::string& code() const { return code_; }

 private:
  int status_;
  std::string code_;
};

using Clock = std::function<double()>;  // seconds, monotone

class Session;
struct Precomputed;

class Service {
 public:
  Service(std::shared_ptr<const Assets> assets, GatewayConfig cfg, Clock clock = {});
  ~Service();

  io::Json create_session(const io::Json& body);
  io::Json get_session(const std::string& id) const;
  io::Json submit_feedback(const std::string& id, const io::Json& body);
  io::Json submit_rating(const std::string& id, const io::Json& body);
  io::Json session_metrics(const std::string& id) const;
  io::Json events(const std::string& id) const;
  io::Json health() const;

  /// Rebuilds a session from its event list; the result equals get_session on the live one.
  io::Json replay(const io::Json& events) const;

  /// Writes a final snapshot next to each session log.
  void flush();

  const GatewayConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<Session> find(const std::string& id) const;

  std::shared_ptr<const Assets> assets_;
  GatewayConfig cfg_;
  Clock clock_;
  std::shared_ptr<const Precomputed> pre_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_ = 1;
};

/// HTTP front end. Bodies are JSON; errors are {"error": {"code", "message"}}.
class Server {
 public:
  explicit Server(Service& service);
  ~Server();

  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void listen();
  /// Runs listen() on a background thread.
  void start_background();
  void stop();

 private:
  Service& service_;
  std::unique_ptr<httplib::Server> http_;
  std::thread thread_;
};

}  // namespace langpref::gateway
