#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace scgs::stub {

/// Behaviour of the bundled /v1/inpaint stub.
enum class Fault {
  none,            // echo the source image
  wrong_dims,      // reply one row taller than the source
  fail_first_n,    // 503 for the first `fail_count` calls, then echo
  fail_ids,        // 500 for request ids in `fail_ids`, echo otherwise
  http_400,        // 400 with a body
  malformed_json,  // 200 with a body that is not JSON
  missing_image,   // 200 JSON without image_png_base64
  bad_base64,      // image field is not base64
  bad_png,         // valid base64, not a PNG
  wrong_request_id,
  slow,            // sleep `delay_s` before echoing
  perturb,         // echo with every pixel inverted (fails the fidelity check)
};

const char* to_string(Fault f);
Fault parse_fault(const std::string& s);
std::vector<Fault> all_faults();

struct StubOptions {
  Fault fault = Fault::none;
  int fail_count = 0;
  std::set<std::string> fail_ids;
  double delay_s = 0.0;
};

class StubServer {
 public:
  explicit StubServer(StubOptions options = {});
  ~StubServer();
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  /// Binds to 127.0.0.1 (port 0 = any free port) and serves on a background thread.
  int start(int port = 0);
  void stop();
  /// Blocks serving on the calling thread.
  void serve_forever(const std::string& host, int port);

  int port() const { return port_; }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  long calls() const { return calls_.load(); }
  std::map<std::string, long> calls_per_id() const;

 private:
  void install();

  StubOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<long> calls_{0};
  mutable std::mutex mu_;
  std::map<std::string, long> per_id_;
};

}  // namespace scgs::stub
