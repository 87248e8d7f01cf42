#include <set>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "remote_scenarios.hpp"
#include "scgs/error.hpp"
#include "scgs/remote.hpp"
#include "scgs/util.hpp"

using namespace scgs;

class RemoteScenario : public ::testing::TestWithParam<size_t> {};

TEST_P(RemoteScenario, Holds) {
  auto all = scenarios::remote_scenarios();
  const auto& s = all.at(GetParam());
  auto r = s.run();
  EXPECT_TRUE(r.pass) << s.name << ": " << r.detail;
}

INSTANTIATE_TEST_SUITE_P(Stub, RemoteScenario, ::testing::Range<size_t>(0, scenarios::remote_scenarios().size()));

TEST(RemoteCoverage, EveryStubFaultHasAScenario) {
  std::set<stub::Fault> covered;
  for (const auto& s : scenarios::remote_scenarios()) covered.insert(s.fault);
  for (auto f : stub::all_faults()) EXPECT_TRUE(covered.count(f)) << stub::to_string(f);
}

TEST(Wire, RequestBodyFields) {
  auto m = generate_synthetic(fixture::tiny_synth(1, 4, 16));
  const auto* e = m.split(Split::train)[0];
  GenerationRequest r{"rq", e->id, {e->id, Plane(16, 16, 0.0), 0.6}, e->label, "ring", 99, GenMode::inpaint};
  r.mask.bits.at(0, 0) = 1.0;
  auto j = nlohmann::json::parse(encode_inpaint_request(r, *e->pixels));
  EXPECT_EQ(j.at("request_id"), "rq");
  EXPECT_EQ(j.at("prompt"), "ring");
  EXPECT_EQ(j.at("seed"), 99);
  EXPECT_EQ(j.at("mode"), "inpaint");
  Image img = decode_png(base64_decode(j.at("image_png_base64").get<std::string>()));
  EXPECT_EQ(img, *e->pixels);
  Image mask = decode_png(base64_decode(j.at("mask_png_base64").get<std::string>()));
  EXPECT_EQ(mask.channels, 1);
  EXPECT_EQ(mask.at(0, 0, 0), 1.0);
  EXPECT_EQ(mask.at(0, 1, 0), 0.0);
}

TEST(Remote, MissingEndpointIsConfigError) {
  auto m = generate_synthetic(fixture::tiny_synth(1, 4, 16));
  const auto* e = m.split(Split::train)[0];
  GenerationRequest r{"rq", e->id, {e->id, Plane(16, 16, 0.0), 0.6}, e->label, "ring", 1, GenMode::inpaint};
  EXPECT_THROW(remote_generate(r, m, RemoteConfig{}), ConfigError);
}

TEST(Stub, FaultNamesRoundTrip) {
  for (auto f : stub::all_faults()) EXPECT_EQ(stub::parse_fault(stub::to_string(f)), f);
  EXPECT_THROW(stub::parse_fault("explode"), ConfigError);
}
