#pragma once

#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "gonerf/guidance.hpp"
#include "gonerf/png_io.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose `_res` macro collides with Eigen internals.
#include <httplib.h>
#include <nlohmann/json.hpp>

// Out-of-process noise prediction over local HTTP.
//
//   GET  /health   -> {"status":"ok","id":...,"native_resolution":N}
//   POST /predict  multipart: prompt, timestep, guidance_scale, seed,
//                  value_offset, value_scale (text fields); noisy, masked
//                  (16-bit PNG, stored value = (v + offset) / scale); mask
//                  (8-bit gray PNG).
//                  -> raw little-endian float32, native x native x 3.
namespace gonerf::wire {

inline constexpr double kValueOffset = 8.0;
inline constexpr double kValueScale = 16.0;

inline std::string bytes_to_string(const std::vector<std::uint8_t>& b) { return {b.begin(), b.end()}; }
inline std::vector<std::uint8_t> string_to_bytes(const std::string& s) { return {s.begin(), s.end()}; }

inline httplib::MultipartFormDataItems encode_request(const GuidanceRequest& r) {
  return {
      {"prompt", r.prompt, "", ""},
      {"timestep", std::to_string(r.timestep), "", ""},
      {"guidance_scale", nlohmann::json(r.guidance_scale).dump(), "", ""},
      {"seed", std::to_string(r.seed), "", ""},
      {"value_offset", nlohmann::json(kValueOffset).dump(), "", ""},
      {"value_scale", nlohmann::json(kValueScale).dump(), "", ""},
      {"noisy", bytes_to_string(png::encode16(r.noisy, kValueOffset, kValueScale)), "noisy.png", "image/png"},
      {"masked", bytes_to_string(png::encode16(r.masked_image, kValueOffset, kValueScale)), "masked.png", "image/png"},
      {"mask", bytes_to_string(png::encode8(png::mask_image(r.mask))), "mask.png", "image/png"},
  };
}

inline GuidanceRequest decode_request(const httplib::Request& req) {
  auto field = [&](const char* name) {
    if (!req.has_file(name)) throw InvalidInput(std::string("missing multipart field '") + name + "'");
    return req.get_file_value(name).content;
  };
  GuidanceRequest r;
  try {
    r.prompt = field("prompt");
    r.timestep = std::stoi(field("timestep"));
    r.guidance_scale = std::stod(field("guidance_scale"));
    r.seed = std::stoull(field("seed"));
    const double offset = std::stod(field("value_offset")), scale = std::stod(field("value_scale"));
    r.noisy = png::decode16(string_to_bytes(field("noisy")), 3, offset, scale);
    r.masked_image = png::decode16(string_to_bytes(field("masked")), 3, offset, scale);
  } catch (const std::logic_error& e) {
    throw InvalidInput(std::string("malformed request field: ") + e.what());
  }
  r.mask = png::image_mask(png::decode8(string_to_bytes(field("mask")), 1));
  r.validate();
  return r;
}

inline std::string encode_prediction(const Image& eps) {
  std::string out(eps.data.size() * sizeof(float), '\0');
  std::memcpy(out.data(), eps.data.data(), out.size());
  return out;
}

inline Image decode_prediction(const std::string& body, int native) {
  const std::size_t expected = static_cast<std::size_t>(native) * native * 3 * sizeof(float);
  if (body.size() != expected)
    throw ContractViolation("provider response has " + std::to_string(body.size()) + " bytes, expected " +
                            std::to_string(expected));
  Image eps(native, native, 3);
  std::memcpy(eps.data.data(), body.data(), body.size());
  return eps;
}

}  // namespace gonerf::wire

namespace gonerf {

// Client side of the wire contract. Construction probes /health and fails
// with a configuration error when the backend is unreachable.
class HttpNoiseProvider : public NoiseProvider {
 public:
  HttpNoiseProvider(const std::string& endpoint, double timeout_s = 60.0) : client_(endpoint) {
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    client_.set_connection_timeout(secs, usecs);
    client_.set_read_timeout(secs, usecs);
    client_.set_write_timeout(secs, usecs);
    auto res = client_.Get("/health");
    if (!res) throw ConfigError("diffusion provider at " + endpoint + " is unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw ConfigError("diffusion provider health check returned " + std::to_string(res->status));
    try {
      const auto j = nlohmann::json::parse(res->body);
      native_ = j.at("native_resolution").get<int>();
      id_ = "http:" + j.value("id", std::string("unknown"));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("diffusion provider health response is malformed: ") + e.what());
    }
  }

  std::string id() const override { return id_; }
  int native_resolution() const override { return native_; }

  Image predict(const GuidanceRequest& request) override {
    std::lock_guard<std::mutex> lock(mu_);
    last_path_.clear();
    auto res = client_.Post("/predict", wire::encode_request(request));
    if (!res)
      throw ProviderError("provider call failed: " + httplib::to_string(res.error()), true, request.timestep, request.seed);
    if (res->status >= 500 || res->status == 429)
      throw ProviderError("provider returned " + std::to_string(res->status), true, request.timestep, request.seed);
    if (res->status != 200)
      throw ProviderError("provider rejected the request (" + std::to_string(res->status) + "): " + res->body, false,
                          request.timestep, request.seed);
    last_path_ = res->get_header_value("X-Guidance-Path");
    return wire::decode_prediction(res->body, native_);
  }

  // "conditional" or "unconditional", as reported by the backend for the last call.
  std::string last_guidance_path() const {
    std::lock_guard<std::mutex> lock(mu_);
    return last_path_;
  }

 private:
  httplib::Client client_;
  int native_ = 0;
  std::string id_;
  mutable std::mutex mu_;
  std::string last_path_;
};

// Hosts any in-process provider behind the wire contract.
class ProviderServer {
 public:
  explicit ProviderServer(NoiseProvider& provider) : provider_(provider) {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      res.set_content(nlohmann::json{{"status", "ok"}, {"id", provider_.id()},
                                     {"native_resolution", provider_.native_resolution()}}
                          .dump(),
                      "application/json");
    });
    server_.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
      try {
        const GuidanceRequest r = wire::decode_request(req);
        if (r.noisy.width != provider_.native_resolution())
          throw InvalidInput("crop resolution differs from the provider's native resolution");
        std::lock_guard<std::mutex> lock(mu_);
        const Image eps = provider_.predict(r);
        res.set_header("X-Guidance-Path", r.guidance_scale == 0.0 ? "unconditional" : "conditional");
        res.set_content(wire::encode_prediction(eps), "application/octet-stream");
      } catch (const ValidationError& e) {
        res.status = 422;
        res.set_content(e.what(), "text/plain");
      } catch (const std::exception& e) {
        res.status = 500;
        res.set_content(e.what(), "text/plain");
      }
    });
  }

  ~ProviderServer() { stop(); }

  // Binds to host on an ephemeral port when port == 0; returns the port.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw IoError("provider server: cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  void stop() {
    if (thread_.joinable()) {
      server_.stop();
      thread_.join();
    }
  }

  int port() const { return port_; }

 private:
  NoiseProvider& provider_;
  httplib::Server server_;
  std::thread thread_;
  std::mutex mu_;
  int port_ = -1;
};

}  // namespace gonerf
