#include "scgs/remote.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "scgs/error.hpp"
#include "scgs/util.hpp"

namespace scgs {

using json = nlohmann::json;

std::string encode_inpaint_request(const GenerationRequest& req, const Image& source) {
  Plane m = req.mask.bits;
  return json{{"request_id", req.request_id},
              {"image_png_base64", base64_encode(encode_png(source))},
              {"mask_png_base64", base64_encode(encode_png(plane_to_image(m)))},
              {"prompt", req.prompt},
              {"seed", req.seed},
              {"mode", to_string(req.mode)}}
      .dump();
}

namespace {

Image decode_reply(const std::string& body, const GenerationRequest& req, const Image& src) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& ex) {
    throw ProtocolError("reply is not JSON: " + std::string(ex.what()));
  }
  if (!j.is_object() || !j.contains("image_png_base64") || !j["image_png_base64"].is_string())
    throw ProtocolError("reply lacks image_png_base64");
  if (j.contains("request_id") && j["request_id"] != req.request_id)
    throw ProtocolError("reply request_id '" + j["request_id"].dump() + "' does not match '" + req.request_id + "'");
  Image img;
  try {
    img = decode_png(base64_decode(j["image_png_base64"].get<std::string>()));
  } catch (const ProtocolError&) {
    throw;
  } catch (const Error& ex) {
    throw ProtocolError("reply image is not a valid PNG: " + std::string(ex.what()));
  }
  if (img.height != src.height || img.width != src.width)
    throw ProtocolError("reply image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        ", expected " + std::to_string(src.height) + "x" + std::to_string(src.width));
  if (img.channels != 3 && img.channels != 1) throw ProtocolError("reply image has unsupported channel count");
  if (img.channels != src.channels) {
    Image conv(img.height, img.width, src.channels);
    for (int r = 0; r < img.height; ++r)
      for (int c = 0; c < img.width; ++c)
        for (int k = 0; k < src.channels; ++k) {
          double v = 0.0;
          if (img.channels == 1) {
            v = img.at(r, c, 0);
          } else {
            for (int q = 0; q < 3; ++q) v += img.at(r, c, q) / 3.0;
          }
          conv.at(r, c, k) = v;
        }
    img = std::move(conv);
  }
  for (double v : img.data)
    if (!(v >= 0.0 && v <= 1.0)) throw ProtocolError("reply image has out-of-range intensities");
  return img;
}

bool transient(int status) { return status == 429 || status >= 500; }

}  // namespace

LabeledImage remote_generate(const GenerationRequest& req, const DatasetManifest& source, const RemoteConfig& cfg,
                             RemoteCallInfo* info) {
  if (cfg.endpoint.empty()) throw ConfigError("remote backend needs an endpoint");
  const LabeledImage* entry = source.find(req.source_image_id);
  if (!entry || !entry->pixels) throw InputError("source image '" + req.source_image_id + "' not found");
  const Image& src = *entry->pixels;
  if (req.mask.bits.height != src.height || req.mask.bits.width != src.width)
    throw InputError("mask does not match the source size");

  httplib::Client client(cfg.endpoint);
  if (!client.is_valid()) throw ConfigError("invalid endpoint '" + cfg.endpoint + "'");
  auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(cfg.timeout_s));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  const std::string body = encode_inpaint_request(req, src);
  RemoteCallInfo local;
  RemoteCallInfo& inf = info ? *info : local;
  inf = {};
  double backoff = cfg.backoff_initial_s;
  std::string last_error;
  for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
    if (attempt > 0) {
      ++inf.retries;
      spdlog::info("request '{}': retry {}/{} after {} (waiting {:.2f}s)", req.request_id, attempt, cfg.max_retries,
                   last_error, backoff);
      std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
      backoff *= 2.0;
    }
    auto res = client.Post("/v1/inpaint", body, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      spdlog::warn("request '{}': HTTP {}: {}", req.request_id, res->status, res->body);
      last_error = "HTTP " + std::to_string(res->status);
      if (transient(res->status)) continue;
      throw GenerationError("request '" + req.request_id + "' rejected with " + last_error + ": " + res->body);
    }
    Image img = decode_reply(res->body, req, src);
    inf.preserved_diff = preserved_mean_abs_diff(img, src, req.mask.bits);
    if (inf.preserved_diff > cfg.fidelity_tolerance) {
      inf.fidelity_warning = true;
      spdlog::warn("request '{}': preserved region differs from the source by {:.4f} (> {:.2f})", req.request_id,
                   inf.preserved_diff, cfg.fidelity_tolerance);
    }
    LabeledImage e;
    e.id = req.request_id;
    e.path = "images/" + req.request_id + ".png";
    e.label = req.target_label;
    e.split = Split::train;
    e.provenance = Provenance::synthesized;
    e.pixels = std::make_shared<const Image>(std::move(img));
    return e;
  }
  throw GenerationError("request '" + req.request_id + "' failed after " + std::to_string(cfg.max_retries) +
                        " retries: " + last_error);
}

LabeledImage RemoteBackend::generate(const GenerationRequest& request, const DatasetManifest& source) {
  RemoteCallInfo info;
  try {
    LabeledImage out = remote_generate(request, source, config_, &info);
    retries_ += info.retries;
    fidelity_warnings_ += info.fidelity_warning ? 1 : 0;
    return out;
  } catch (...) {
    retries_ += info.retries;
    throw;
  }
}

}  // namespace scgs
