#include "stylespace/service/service.hpp"

#include <atomic>
#include <cmath>
#include <csignal>
#include <span>
#include <utility>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "stylespace/error.hpp"

namespace stylespace {
namespace {

using nlohmann::json;

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, json{{"error", message}});
}

/// Reads an optional numeric array field; returns false when it is not one.
bool read_vector(const json& request, const char* key, std::vector<Real>& out, bool& present) {
  const auto it = request.find(key);
  present = it != request.end() && !it->is_null();
  if (!present) return true;
  if (!it->is_array()) return false;
  out.clear();
  for (const auto& v : *it) {
    if (!v.is_number()) return false;
    out.push_back(static_cast<Real>(v.get<double>()));
  }
  return true;
}

Tensor<Real> row(const std::vector<Real>& v) { return Tensor<Real>(Shape{1, v.size()}, std::vector<Real>(v)); }

}  // namespace

ModelSession::ModelSession(Pipeline pipeline) : pipeline_(std::move(pipeline)) {
  if (!pipeline_.style || !pipeline_.normalizer) throw ConfigError("session: checkpoint lacks a pruned style encoder");
  if (!pipeline_.vae || pipeline_.d_content == 0) {
    throw ConfigError("session: checkpoint lacks a pruned content encoder");
  }
  if (!pipeline_.generator) throw ConfigError("session: checkpoint lacks a generator");
  if (!(pipeline_.generator->layout == pipeline_.layout())) {
    throw ConfigError("session: generator layout disagrees with the pruned code lengths");
  }
  pipeline_.head.reset();
  pipeline_.consortium.reset();
}

ModelSession ModelSession::load(const std::filesystem::path& checkpoint) {
  return ModelSession(read_pipeline(load_checkpoint(checkpoint)));
}

Tensor<Real> ModelSession::seeded_noise(std::uint64_t seed) const {
  const std::size_t d = layout().d_noise;
  if (seed == 0) return Tensor<Real>(Shape{1, d});
  RngStream rng(seed, stream_id("service-noise"));
  return sample_gaussian<Real>(rng, {1, d});
}

ImageRGB ModelSession::generate(const Tensor<Real>& style, const Tensor<Real>& content,
                                const Tensor<Real>& noise) const {
  const Tensor<Real> image = pipeline_.generator->generate(style, content, noise);
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (!std::isfinite(image[i])) throw NumericError("generator produced a non-finite pixel");
  }
  return lab_to_rgb(tensor_to_image(image, 0));
}

std::pair<std::vector<Real>, std::vector<Real>> ModelSession::encode(const ImageRGB& image) const {
  if (image.width != resolution() || image.height != resolution()) {
    throw ShapeError("image must be " + std::to_string(resolution()) + "x" + std::to_string(resolution()));
  }
  const ImageLab lab = rgb_to_lab(image);
  const Tensor<Real> x = images_to_tensor<Real>(std::span<const ImageLab>(&lab, 1));
  const Tensor<Real> u = pipeline_.style_codes(x), v = pipeline_.content_codes(x);
  return {std::vector<Real>(u.raw(), u.raw() + u.size()), std::vector<Real>(v.raw(), v.raw() + v.size())};
}

HttpResponse handle_model_info(const ModelSession& session) {
  const CodeLayout l = session.layout();
  return json_response(200, json{{"d_style", l.d_style},
                                 {"d_content", l.d_content},
                                 {"d_noise", l.d_noise},
                                 {"resolution", session.resolution()}});
}

HttpResponse handle_generate(const ModelSession& session, const std::string& body) {
  const json request = json::parse(body, nullptr, false);
  if (request.is_discarded() || !request.is_object()) return error_response(400, "malformed json");
  const CodeLayout l = session.layout();
  std::vector<Real> style, content, noise;
  bool has_style = false, has_content = false, has_noise = false;
  if (!read_vector(request, "style", style, has_style)) return error_response(422, "style type");
  if (!read_vector(request, "content", content, has_content)) return error_response(422, "content type");
  if (!read_vector(request, "noise", noise, has_noise)) return error_response(422, "noise type");
  if (!has_style || style.size() != l.d_style) return error_response(422, "style length");
  if (!has_content || content.size() != l.d_content) return error_response(422, "content length");
  if (has_noise && noise.size() != l.d_noise) return error_response(422, "noise length");
  std::uint64_t seed = 0;
  const auto it = request.find("seed");
  const bool has_seed = it != request.end() && !it->is_null();
  if (has_seed) {
    if (!it->is_number_unsigned() && !(it->is_number_integer() && it->get<std::int64_t>() >= 0)) {
      return error_response(422, "seed type");
    }
    seed = it->get<std::uint64_t>();
  }
  if (has_noise && has_seed) return error_response(422, "noise and seed");
  try {
    const ImageRGB img = session.generate(row(style), row(content), has_noise ? row(noise) : session.seeded_noise(seed));
    const auto png = encode_png(img);
    return {200, "image/png", std::string(png.begin(), png.end())};
  } catch (const NumericError& e) {
    return error_response(500, e.what());
  }
}

HttpResponse handle_encode(const ModelSession& session, const std::string& body) {
  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(body.data()), body.size());
  if (!looks_like_png(bytes)) return error_response(415, "png required");
  ImageRGB image;
  try {
    image = decode_png(bytes);
  } catch (const Error&) {
    return error_response(415, "unreadable png");
  }
  if (image.width != session.resolution() || image.height != session.resolution()) {
    return error_response(422, "resolution");
  }
  try {
    const auto [style, content] = session.encode(image);
    return json_response(200, json{{"style", style}, {"content", content}});
  } catch (const NumericError& e) {
    return error_response(500, e.what());
  }
}

BindAddress parse_bind_address(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw ConfigError("bind address must be host:port, got '" + text + "'");
  }
  BindAddress out;
  out.host = text.substr(0, colon);
  const std::string port = text.substr(colon + 1);
  if (port.find_first_not_of("0123456789") != std::string::npos || port.size() > 5) {
    throw ConfigError("bad port '" + port + "'");
  }
  out.port = std::stoi(port);
  if (out.port > 65535) throw ConfigError("bad port '" + port + "'");
  return out;
}

struct Server::Impl {
  std::shared_ptr<const ModelSession> session;
  httplib::Server http;
};

Server::Server(std::shared_ptr<const ModelSession> session) : impl_(std::make_unique<Impl>()) {
  impl_->session = std::move(session);
  auto& http = impl_->http;
  http.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                            {"Access-Control-Allow-Headers", "Content-Type"}});
  auto reply = [](httplib::Response& res, const HttpResponse& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  const ModelSession* s = impl_->session.get();
  http.Get("/model-info", [s, reply](const httplib::Request&, httplib::Response& res) {
    reply(res, handle_model_info(*s));
  });
  http.Post("/generate", [s, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_generate(*s, req.body));
  });
  http.Post("/encode", [s, reply](const httplib::Request& req, httplib::Response& res) {
    reply(res, handle_encode(*s, req.body));
  });
  http.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  http.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      reply(res, error_response(500, e.what()));
    }
  });
}

Server::~Server() { stop(); }

int Server::bind(const BindAddress& address) {
  const int port = address.port == 0 ? impl_->http.bind_to_any_port(address.host)
                                     : (impl_->http.bind_to_port(address.host, address.port) ? address.port : -1);
  if (port < 0) throw ConfigError("cannot bind " + address.host + ":" + std::to_string(address.port));
  return port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_->http.is_running()) impl_->http.stop();
}

namespace {
std::atomic<Server*> g_active{nullptr};
extern "C" void on_signal(int) {
  if (Server* s = g_active.load()) s->stop();
}
}  // namespace

void serve(const std::filesystem::path& checkpoint, const BindAddress& address) {
  auto session = std::make_shared<const ModelSession>(ModelSession::load(checkpoint));
  Server server(session);
  const int port = server.bind(address);
  const CodeLayout l = session->layout();
  spdlog::info("serving d_style={} d_content={} d_noise={} at {}:{}", l.d_style, l.d_content, l.d_noise,
               address.host, port);
  g_active.store(&server);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  server.listen();
  g_active.store(nullptr);
  spdlog::info("server stopped");
}

}  // namespace stylespace
