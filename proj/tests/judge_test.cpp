#include <gtest/gtest.h>

#include <deque>
#include <filesystem>
#include <thread>

#include <unistd.h>

#include "reljudge/http_endpoint.hpp"
#include "reljudge/judge.hpp"

using namespace reljudge;

namespace {

/// Replays a fixed list of outcomes; an empty status means "throw".
class ScriptedEndpoint : public Endpoint {
public:
  explicit ScriptedEndpoint(std::deque<std::optional<HttpResponse>> script) : script_(std::move(script)) {}
  HttpResponse post(const JudgeRequest& req) override {
    last_body = req.body();
    ++calls;
    if (script_.empty()) throw std::runtime_error("script exhausted");
    auto next = script_.front();
    script_.pop_front();
    if (!next) throw std::runtime_error("connection reset");
    return *next;
  }
  int calls = 0;
  nlohmann::json last_body;

private:
  std::deque<std::optional<HttpResponse>> script_;
};

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("reljudge_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p;
}

PromptText prompt_for(const std::string& label, int topic = 1, const std::string& doc = "D1") {
  Topic t{topic, "query", "description", "narrative"};
  DocumentText d{doc, "page text of " + doc, false, false, 9};
  return render_prompt(PromptSpec::parse(label), t, d);
}

HttpResponse ok(const std::string& content) { return {200, completion_body(content, "gpt-4")}; }

auto no_sleep() {
  return [](std::chrono::milliseconds) {};
}

}  // namespace

TEST(DecodingParams, DefaultsAndJson) {
  DecodingParams p;
  EXPECT_EQ(p.temperature, 0.0);
  EXPECT_EQ(p.top_p, 1.0);
  EXPECT_EQ(p.frequency_penalty, 0.5);
  EXPECT_EQ(p.presence_penalty, 0.0);
  nlohmann::json j = p;
  auto back = j.get<DecodingParams>();
  EXPECT_EQ(back.model, p.model);
  EXPECT_EQ(back.frequency_penalty, 0.5);
}

TEST(JudgeRequest, BodyCarriesPromptAndParams) {
  auto pr = prompt_for("-----");
  JudgeRequest req{pr.text, pr.provenance, {}};
  auto b = req.body();
  EXPECT_EQ(b["messages"][0]["content"], pr.text);
  EXPECT_EQ(b["temperature"], 0.0);
  EXPECT_EQ(b["frequency_penalty"], 0.5);
}

TEST(JudgeRequest, CacheKeyDependsOnPromptAndParams) {
  auto a = prompt_for("-----");
  auto b = prompt_for("R----");
  JudgeRequest ra{a.text, a.provenance, {}}, rb{b.text, b.provenance, {}};
  EXPECT_NE(ra.cache_key(), rb.cache_key());
  EXPECT_EQ(ra.cache_key(), (JudgeRequest{a.text, a.provenance, {}}.cache_key()));
  DecodingParams hot;
  hot.temperature = 0.7;
  EXPECT_NE(ra.cache_key(), (JudgeRequest{a.text, a.provenance, hot}.cache_key()));
  EXPECT_EQ(ra.cache_key().size(), 64u);
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(ExtractContent, CompletionAndPassthrough) {
  EXPECT_EQ(extract_content(completion_body("\"O\": 2}]", "m")), "\"O\": 2}]");
  EXPECT_EQ(extract_content(R"({"choices":[{"text":"abc"}]})"), "abc");
  EXPECT_EQ(extract_content("not json"), "not json");
}

TEST(JudgeClient, RetriesTransientThenSucceeds) {
  ScriptedEndpoint ep({HttpResponse{429, "slow down"}, std::nullopt, ok("\"O\": 1}]")});
  std::vector<long long> sleeps;
  JudgeClient client(ep, nullptr, {}, [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  auto r = client.judge(prompt_for("-----"), {});
  EXPECT_EQ(r.attempts, 3);
  EXPECT_EQ(r.content, "\"O\": 1}]");
  EXPECT_EQ(sleeps, (std::vector<long long>{500, 1000}));
  EXPECT_EQ(ep.calls, 3);
}

TEST(JudgeClient, GivesUpAfterMaxAttempts) {
  ScriptedEndpoint ep({HttpResponse{503, ""}, HttpResponse{503, ""}, HttpResponse{503, ""}, ok("x")});
  JudgeClient client(ep, nullptr, {}, no_sleep());
  try {
    client.judge(prompt_for("-----"), {});
    FAIL() << "expected JudgeError";
  } catch (const JudgeError& e) {
    EXPECT_EQ(e.kind(), "http_error");
    EXPECT_EQ(e.status(), 503);
    EXPECT_EQ(e.attempts().size(), 3u);
  }
  EXPECT_EQ(ep.calls, 3);
}

TEST(JudgeClient, ClientErrorsAreNotRetried) {
  ScriptedEndpoint ep({HttpResponse{401, "bad token"}, ok("x")});
  JudgeClient client(ep, nullptr, {}, no_sleep());
  try {
    client.judge(prompt_for("-----"), {});
    FAIL() << "expected JudgeError";
  } catch (const JudgeError& e) {
    EXPECT_EQ(e.kind(), "http_error");
    EXPECT_EQ(e.status(), 401);
  }
  EXPECT_EQ(ep.calls, 1);
}

TEST(JudgeClient, TransportFailuresReported) {
  ScriptedEndpoint ep({std::nullopt, std::nullopt, std::nullopt});
  JudgeClient client(ep, nullptr, {}, no_sleep());
  try {
    client.judge(prompt_for("-----"), {});
    FAIL() << "expected JudgeError";
  } catch (const JudgeError& e) {
    EXPECT_EQ(e.kind(), "transport_error");
    EXPECT_FALSE(e.status().has_value());
  }
}

TEST(ResponseCache, SecondRunMakesNoNetworkCalls) {
  auto dir = temp_dir("cache");
  ResponseCache cache(dir);
  LabelSet gold = parse_qrels("1 0 D1 2\n1 0 D2 0\n");
  MockEndpoint mock(gold, {});
  const auto p1 = prompt_for("-DNA-", 1, "D1");
  const auto p2 = prompt_for("-DNA-", 1, "D2");
  {
    JudgeClient client(mock, &cache, {}, no_sleep());
    auto r1 = client.judge(p1, {});
    auto r2 = client.judge(p2, {});
    EXPECT_FALSE(r1.from_cache);
    EXPECT_EQ(client.network_calls(), 2u);
  }
  JudgeClient again(mock, &cache, {}, no_sleep());
  auto r1 = again.judge(p1, {});
  EXPECT_TRUE(r1.from_cache);
  EXPECT_EQ(r1.content, mock.content_for(p1.provenance));
  again.judge(p2, {});
  EXPECT_EQ(again.network_calls(), 0u);
  EXPECT_EQ(mock.calls(), 2u);

  // The cache entry records request provenance.
  auto entry = nlohmann::json::parse(detail::read_file(dir / (r1.key + ".json")));
  EXPECT_EQ(entry["topic"], 1);
  EXPECT_EQ(entry["doc"], "D1");
  EXPECT_EQ(entry["spec"], "-DNA-");
  std::filesystem::remove_all(dir);
}

TEST(ResponseCache, IgnoresTornEntries) {
  auto dir = temp_dir("torn");
  ResponseCache cache(dir);
  detail::write_file_atomic(dir / "abc.json", "{\"key\": \"abc\", \"resp");
  EXPECT_FALSE(cache.get("abc").has_value());
  std::filesystem::remove_all(dir);
}

TEST(ParseResponse, ContinuationOfPrimer) {
  auto r = parse_response("\"M\": 2, \"T\": 1, \"O\": 1}]", true, 1);
  ASSERT_TRUE(r.parseable) << r.reason;
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0], (JudgeRecord{2, 1, 1}));
  EXPECT_TRUE(r.warnings.empty());
}

TEST(ParseResponse, FullArrayAndProseAround) {
  auto r = parse_response("Sure! Here you go: [{\"O\": 2}, {\"O\": 0}] Hope this helps", false, 2);
  ASSERT_TRUE(r.parseable) << r.reason;
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[1].overall, 0);
}

TEST(ParseResponse, UnparseableCases) {
  EXPECT_FALSE(parse_response("I cannot judge this.", false, 1).parseable);
  EXPECT_FALSE(parse_response("[]", false, 1).parseable);
  EXPECT_FALSE(parse_response("[{\"M\": 1}]", false, 1).parseable);
  EXPECT_FALSE(parse_response("[{\"O\": 3}]", false, 1).parseable);
  EXPECT_FALSE(parse_response("[{\"O\": \"high\"}]", false, 1).parseable);
  EXPECT_FALSE(parse_response("\"O\": 1", false, 1).parseable);
}

TEST(ParseResponse, AspectIrregularitiesWarnOnly) {
  auto r = parse_response("[{\"M\": 7, \"O\": 1}]", true, 1);
  ASSERT_TRUE(r.parseable);
  EXPECT_FALSE(r.records[0].topicality.has_value());
  EXPECT_GE(r.warnings.size(), 2u);  // invalid M, missing T
  auto u = parse_response("[{\"M\": 1, \"O\": 1}]", false, 1);
  ASSERT_TRUE(u.parseable);
  EXPECT_FALSE(u.records[0].topicality.has_value());
  EXPECT_EQ(u.warnings.size(), 1u);
}

TEST(ParseResponse, CountMismatchWarns) {
  auto r = parse_response("[{\"O\": 1}, {\"O\": 2}]", false, 5);
  ASSERT_TRUE(r.parseable);
  EXPECT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.warnings.size(), 1u);
}

TEST(Aggregate, MeanOfOverall) {
  std::vector<JudgeRecord> recs{{2, 2, 2}, {1, 1, 1}, {std::nullopt, std::nullopt, 0}, {0, 0, 0}, {1, 2, 1}};
  EXPECT_DOUBLE_EQ(aggregate(recs), 4.0 / 5.0);
  EXPECT_DOUBLE_EQ(relevant_fraction(recs), 3.0 / 5.0);
  EXPECT_EQ(binarize(aggregate(recs)), 0);
  EXPECT_EQ(binarize(1.0), 1);
  EXPECT_THROW(aggregate({}), ValidationError);
}

TEST(ScoreResponse, DropsUnparseable) {
  auto spec = PromptSpec::parse("----M");
  auto good = score_response("\"O\": 2}, {\"O\": 1}, {\"O\": 1}, {\"O\": 0}, {\"O\": 1}]", spec);
  ASSERT_TRUE(good.parseable());
  EXPECT_DOUBLE_EQ(*good.score, 1.0);
  EXPECT_DOUBLE_EQ(*good.relevant_fraction, 0.8);
  auto bad = score_response("no idea", spec);
  EXPECT_FALSE(bad.parseable());
  EXPECT_FALSE(bad.reason.empty());
  DropStats d;
  d.add(good.parseable());
  d.add(bad.parseable());
  EXPECT_DOUBLE_EQ(d.rate(), 0.5);
}

TEST(MockEndpoint, ZeroFlipReproducesGold) {
  LabelSet gold = parse_qrels("1 0 A 0\n1 0 B 1\n1 0 C 2\n");
  MockEndpoint mock(gold, {});
  for (const auto& [key, grade] : gold.entries()) {
    for (const auto* label : {"-----", "---A-", "----M", "RDNAM"}) {
      auto pr = prompt_for(label, key.topic, key.doc);
      auto out = score_response(mock.content_for(pr.provenance), pr.provenance.spec);
      ASSERT_TRUE(out.parseable()) << label;
      EXPECT_DOUBLE_EQ(*out.score, grade) << label << " " << key.doc;
    }
  }
}

TEST(MockEndpoint, UnknownPairIsUnparseable) {
  MockEndpoint mock(parse_qrels("1 0 A 0\n"), {});
  auto pr = prompt_for("-----", 1, "ZZZ");
  EXPECT_FALSE(score_response(mock.content_for(pr.provenance), pr.provenance.spec).parseable());
}

TEST(MockEndpoint, FlipRateControlsDisagreement) {
  std::string q;
  for (int i = 0; i < 2000; ++i) q += "1 0 d" + std::to_string(i) + " " + std::to_string(i % 2) + "\n";
  auto gold = parse_qrels(q);
  for (double rate : {0.0, 0.2, 0.5, 1.0}) {
    MockEndpoint mock(gold, {rate, 17});
    int flipped = 0;
    for (const auto& [key, grade] : gold.entries()) {
      auto pr = prompt_for("-----", key.topic, key.doc);
      auto out = score_response(mock.content_for(pr.provenance), pr.provenance.spec);
      flipped += binarize(*out.score) != binarize(grade);
    }
    EXPECT_NEAR(flipped / 2000.0, rate, 0.04) << rate;
  }
}

TEST(MockEndpoint, DeterministicPerSeed) {
  auto gold = parse_qrels("1 0 A 0\n1 0 B 2\n");
  MockEndpoint a(gold, {0.5, 3}), b(gold, {0.5, 3});
  for (const auto* doc : {"A", "B"}) {
    auto pr = prompt_for("----M", 1, doc);
    EXPECT_EQ(a.content_for(pr.provenance), b.content_for(pr.provenance));
  }
}

TEST(HttpEndpoint, PostsToLocalServer) {
  httplib::Server svr;
  std::string seen_auth;
  nlohmann::json seen_body;
  svr.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = nlohmann::json::parse(req.body);
    res.set_content(completion_body("\"O\": 2}]", "gpt-4"), "application/json");
  });
  svr.Post("/fail", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = svr.bind_to_any_port("127.0.0.1");
  std::thread th([&] { svr.listen_after_bind(); });
  svr.wait_until_ready();

  const auto base = "http://127.0.0.1:" + std::to_string(port);
  HttpEndpoint ep(base + "/v1/chat/completions", "secret");
  JudgeClient client(ep, nullptr, {}, no_sleep());
  auto pr = prompt_for("-----");
  auto r = client.judge(pr, {});
  EXPECT_EQ(r.content, "\"O\": 2}]");
  EXPECT_EQ(seen_auth, "Bearer secret");
  EXPECT_EQ(seen_body["messages"][0]["content"], pr.text);

  HttpEndpoint failing(base + "/fail", "");
  JudgeClient fclient(failing, nullptr, {}, no_sleep());
  EXPECT_THROW(fclient.judge(pr, {}), JudgeError);
  EXPECT_EQ(fclient.network_calls(), 3u);

  svr.stop();
  th.join();
}

TEST(HttpEndpoint, RejectsUrlWithoutScheme) { EXPECT_THROW(HttpEndpoint("localhost:80/x", ""), ValidationError); }
