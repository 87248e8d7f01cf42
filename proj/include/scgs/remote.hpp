#pragma once

#include <atomic>
#include <string>

#include "scgs/synth.hpp"

namespace scgs {

struct RemoteConfig {
  std::string endpoint;  // "http://host:port"
  double timeout_s = 30.0;
  int max_retries = 3;
  double backoff_initial_s = 0.2;  // doubles after every retry
  double fidelity_tolerance = 0.05;
};

struct RemoteCallInfo {
  int retries = 0;
  bool fidelity_warning = false;
  double preserved_diff = 0.0;
};

/// Wire body for POST /v1/inpaint.
std::string encode_inpaint_request(const GenerationRequest& request, const Image& source);

/// One request against an external inpainting service. Network failures,
/// timeouts and 5xx/429 replies are retried; other non-200 replies and
/// exhausted retries raise GenerationError; malformed replies raise ProtocolError.
LabeledImage remote_generate(const GenerationRequest& request, const DatasetManifest& source,
                             const RemoteConfig& config, RemoteCallInfo* info = nullptr);

class RemoteBackend : public GenerationBackend {
 public:
  explicit RemoteBackend(RemoteConfig config) : config_(std::move(config)) {}
  std::string name() const override { return "remote"; }
  LabeledImage generate(const GenerationRequest& request, const DatasetManifest& source) override;

  long retries() const { return retries_.load(); }
  long fidelity_warnings() const { return fidelity_warnings_.load(); }

 private:
  RemoteConfig config_;
  std::atomic<long> retries_{0};
  std::atomic<long> fidelity_warnings_{0};
};

}  // namespace scgs
