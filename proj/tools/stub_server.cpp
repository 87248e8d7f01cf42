#include "stub_server.hpp"

#include <chrono>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "scgs/error.hpp"
#include "scgs/image.hpp"
#include "scgs/util.hpp"

namespace scgs::stub {

using json = nlohmann::json;

namespace {

struct FaultName {
  Fault f;
  const char* name;
};
constexpr FaultName kNames[] = {
    {Fault::none, "none"},
    {Fault::wrong_dims, "wrong-dims"},
    {Fault::fail_first_n, "fail-first-n"},
    {Fault::fail_ids, "fail-ids"},
    {Fault::http_400, "http-400"},
    {Fault::malformed_json, "malformed-json"},
    {Fault::missing_image, "missing-image"},
    {Fault::bad_base64, "bad-base64"},
    {Fault::bad_png, "bad-png"},
    {Fault::wrong_request_id, "wrong-request-id"},
    {Fault::slow, "slow"},
    {Fault::perturb, "perturb"},
};

}  // namespace

const char* to_string(Fault f) {
  for (const auto& n : kNames)
    if (n.f == f) return n.name;
  return "none";
}

Fault parse_fault(const std::string& s) {
  for (const auto& n : kNames)
    if (s == n.name) return n.f;
  throw ConfigError("unknown stub fault '" + s + "'");
}

std::vector<Fault> all_faults() {
  std::vector<Fault> out;
  for (const auto& n : kNames) out.push_back(n.f);
  return out;
}

StubServer::StubServer(StubOptions options) : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install();
}

StubServer::~StubServer() { stop(); }

std::map<std::string, long> StubServer::calls_per_id() const {
  std::lock_guard lock(mu_);
  return per_id_;
}

void StubServer::install() {
  server_->Post("/v1/inpaint", [this](const httplib::Request& req, httplib::Response& res) {
    long n = ++calls_;
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      res.status = 400;
      res.set_content("request is not JSON", "text/plain");
      return;
    }
    std::string id = body.value("request_id", "");
    {
      std::lock_guard lock(mu_);
      ++per_id_[id];
    }
    const StubOptions& o = options_;
    auto reply = [&](const std::string& png_b64, const std::string& rid) {
      res.status = 200;
      res.set_content(json{{"request_id", rid}, {"image_png_base64", png_b64}}.dump(), "application/json");
    };
    Image src;
    try {
      src = decode_png(base64_decode(body.at("image_png_base64").get<std::string>()));
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(std::string("bad image: ") + e.what(), "text/plain");
      return;
    }
    switch (o.fault) {
      case Fault::wrong_dims: {
        Image big(src.height + 1, src.width, src.channels, 0.5);
        return reply(base64_encode(encode_png(big)), id);
      }
      case Fault::fail_first_n:
        if (n <= o.fail_count) {
          res.status = 503;
          res.set_content("temporarily unavailable", "text/plain");
          return;
        }
        break;
      case Fault::fail_ids:
        if (o.fail_ids.count(id)) {
          res.status = 500;
          res.set_content("injected failure for " + id, "text/plain");
          return;
        }
        break;
      case Fault::http_400:
        res.status = 400;
        res.set_content("prompt rejected", "text/plain");
        return;
      case Fault::malformed_json:
        res.status = 200;
        res.set_content("{not json", "application/json");
        return;
      case Fault::missing_image:
        res.status = 200;
        res.set_content(json{{"request_id", id}}.dump(), "application/json");
        return;
      case Fault::bad_base64: return reply("!!!not base64!!!", id);
      case Fault::bad_png: {
        const std::string junk = "definitely not a png";
        return reply(base64_encode(std::vector<std::uint8_t>(junk.begin(), junk.end())), id);
      }
      case Fault::wrong_request_id: return reply(base64_encode(encode_png(src)), id + "-other");
      case Fault::slow: std::this_thread::sleep_for(std::chrono::duration<double>(o.delay_s)); break;
      case Fault::perturb:
        for (double& v : src.data) v = 1.0 - v;
        break;
      case Fault::none: break;
    }
    reply(base64_encode(encode_png(src)), id);
  });
}

int StubServer::start(int port) {
  port_ = port == 0 ? server_->bind_to_any_port("127.0.0.1") : (server_->bind_to_port("127.0.0.1", port) ? port : -1);
  if (port_ < 0) throw IoError("stub server could not bind port " + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void StubServer::serve_forever(const std::string& host, int port) {
  port_ = port;
  if (!server_->listen(host, port)) throw IoError("stub server could not listen on " + host + ":" + std::to_string(port));
}

void StubServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace scgs::stub
