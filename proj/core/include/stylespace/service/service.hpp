#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "stylespace/trainer/pipeline.hpp"

namespace stylespace {

/// Frozen style encoder, content encoder, generator and normalizer.
class ModelSession {
 public:
  /// Throws ConfigError unless all three networks and both pruning steps are present.
  explicit ModelSession(Pipeline pipeline);
  static ModelSession load(const std::filesystem::path& checkpoint);

  CodeLayout layout() const { return pipeline_.layout(); }
  std::size_t resolution() const { return pipeline_.generator->spec.resolution; }
  const Pipeline& pipeline() const { return pipeline_; }

  /// Noise drawn for a seed; seed 0 gives the zero vector.
  Tensor<Real> seeded_noise(std::uint64_t seed) const;
  /// One image from codes [1, d_style], [1, d_content], [1, d_noise].
  ImageRGB generate(const Tensor<Real>& style, const Tensor<Real>& content, const Tensor<Real>& noise) const;
  /// Normalized kept style code and kept content mean of one image.
  std::pair<std::vector<Real>, std::vector<Real>> encode(const ImageRGB& image) const;

 private:
  Pipeline pipeline_;
};

struct HttpResponse {
  int status = 200;
  std::string content_type;
  std::string body;
};

/// Transport-independent endpoint handlers.
HttpResponse handle_model_info(const ModelSession& session);
HttpResponse handle_generate(const ModelSession& session, const std::string& body);
HttpResponse handle_encode(const ModelSession& session, const std::string& body);

struct BindAddress {
  std::string host = "127.0.0.1";
  int port = 8787;
};

/// "host:port"; throws ConfigError on malformed input.
BindAddress parse_bind_address(const std::string& text);

/// HTTP front end over a shared session.
class Server {
 public:
  explicit Server(std::shared_ptr<const ModelSession> session);
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds the socket; port 0 picks a free port. Returns the bound port.
  int bind(const BindAddress& address);
  /// Serves until stop(); in-flight requests complete first.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Loads the checkpoint and serves until SIGINT or SIGTERM.
void serve(const std::filesystem::path& checkpoint, const BindAddress& address);

}  // namespace stylespace
