// Standalone /v1/inpaint stub for manual testing of the remote backend.
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "stub_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Echo / fault-injection inpainting stub"};
  std::string host = "127.0.0.1", fault = "none", ids;
  int port = 8765, fail_count = 0;
  double delay = 0.0;
  app.add_option("--host", host);
  app.add_option("--port", port);
  app.add_option("--fault", fault, "none, wrong-dims, fail-first-n, fail-ids, http-400, malformed-json, "
                                   "missing-image, bad-base64, bad-png, wrong-request-id, slow, perturb");
  app.add_option("--fail-count", fail_count, "For fail-first-n");
  app.add_option("--fail-ids", ids, "Comma-separated request ids for fail-ids");
  app.add_option("--delay", delay, "Seconds to sleep for slow");
  CLI11_PARSE(app, argc, argv);

  scgs::stub::StubOptions o;
  try {
    o.fault = scgs::stub::parse_fault(fault);
  } catch (const std::exception& e) {
    std::cerr << e.what() << '\n';
    return 2;
  }
  o.fail_count = fail_count;
  o.delay_s = delay;
  std::stringstream in(ids);
  for (std::string id; std::getline(in, id, ',');)
    if (!id.empty()) o.fail_ids.insert(id);
  scgs::stub::StubServer server(o);
  std::cout << "serving /v1/inpaint on " << host << ":" << port << " (fault " << fault << ")" << std::endl;
  server.serve_forever(host, port);
  return 0;
}
