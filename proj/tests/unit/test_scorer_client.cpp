#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "orderbkd/errors.hpp"
#include "orderbkd/lm.hpp"
#include "orderbkd/metrics.hpp"
#include "orderbkd/scorer_client.hpp"
#include "orderbkd/triggers.hpp"

using namespace orderbkd;
using namespace std::chrono_literals;

namespace {

std::shared_ptr<ExternalScorer> peer(const std::string& mode = "normal", std::vector<std::string> extra = {},
                                     std::chrono::milliseconds timeout = 10s) {
  std::vector<std::string> argv = {ORDERBKD_FAKE_PEER, mode};
  argv.insert(argv.end(), extra.begin(), extra.end());
  return ExternalScorer::spawn(argv, timeout);
}

// Mirror of the fake peer's scoring rule.
double expected_logprob(const Tokens& t) {
  double lp = -0.5;
  for (const auto& w : t) lp -= 0.1 * static_cast<double>(w.size());
  return lp;
}

}  // namespace

TEST_CASE("handshake metadata is exposed") {
  const auto p = peer();
  CHECK(p->handshake()["model"] == "fake");
  CHECK(p->describe().find("spawn:") == 0);
  CHECK(p->describe().find("\"fake\"") != std::string::npos);
  CHECK(ScorerHandle::external(p).identity().find("external:spawn:") == 0);
}

TEST_CASE("single and batched logprob") {
  const auto p = peer();
  const Tokens t = {"a", "bcd"};
  CHECK(p->logprob(t) == doctest::Approx(expected_logprob(t)).epsilon(1e-12));

  std::vector<Tokens> batch;
  for (int i = 0; i < 100; ++i) batch.push_back(Tokens(static_cast<std::size_t>(i % 7), std::string(1 + i % 3, 'x')));
  const auto out = p->logprob_batch(batch);
  REQUIRE(out.size() == batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(out[i] == doctest::Approx(expected_logprob(batch[i])).epsilon(1e-12));
  CHECK(p->logprob_batch(std::span<const Tokens>{}).empty());
}

TEST_CASE("out-of-order responses are matched by id") {
  const auto p = peer("reorder");
  std::vector<Tokens> batch;
  for (int i = 0; i < 40; ++i) batch.push_back(Tokens(static_cast<std::size_t>(i), "w"));
  const auto out = p->logprob_batch(batch);
  for (std::size_t i = 0; i < batch.size(); ++i) CHECK(out[i] == doctest::Approx(expected_logprob(batch[i])).epsilon(1e-12));
}

TEST_CASE("large embedding batches do not stall the pipes") {
  const auto p = peer("normal", {"dim=4096"});
  std::vector<std::string> texts(300, "some words here");
  const auto out = p->embed_batch(texts);
  REQUIRE(out.size() == 300);
  CHECK(out.back().size() == 4096);
}

TEST_CASE("embedding and similarity through the peer") {
  const auto p = peer();
  const auto v = p->embed("two words");
  REQUIRE(v.size() == 3);
  double n = 0;
  for (double x : v) n += x * x;
  CHECK(n == doctest::Approx(1.0));

  const auto emb = EmbedderHandle::external(p);
  CHECK(emb.kind() == EmbedderHandle::Kind::kExternal);
  const std::vector<std::string> a = {"the film is good", "x"}, b = {"good the film is", "a much longer text"};
  const auto sims = similarities(a, b, emb);
  CHECK(sims[0] == doctest::Approx(1.0));
  CHECK(sims[1] < 0.99);
}

TEST_CASE("error objects become ScorerError and the connection stays usable") {
  const auto p = peer();
  CHECK_THROWS_AS(p->logprob(Tokens{"boom"}), ScorerError);
  std::vector<Tokens> batch = {{"a"}, {"boom"}, {"b"}};
  CHECK_THROWS_AS(p->logprob_batch(batch), ScorerError);
  CHECK(p->logprob(Tokens{"ok"}) == doctest::Approx(expected_logprob({"ok"})));
  CHECK_THROWS_AS(peer("error")->embed("x") , ScorerError);
}

TEST_CASE("protocol violations are transport errors") {
  CHECK_THROWS_AS(peer("bad-handshake"), TransportError);
  CHECK_THROWS_AS(peer("not-json-handshake"), TransportError);
  CHECK_THROWS_AS(peer("crash")->logprob(Tokens{"a"}), TransportError);
  CHECK_THROWS_AS(peer("malformed")->logprob(Tokens{"a"}), TransportError);
  CHECK_THROWS_AS(peer("unknown-id")->logprob(Tokens{"a"}), TransportError);
  CHECK_THROWS_AS(peer("positive")->logprob(Tokens{"a"}), TransportError);
  CHECK_THROWS_AS(peer("silent", {}, 300ms)->logprob(Tokens{"a"}), TransportError);
  CHECK_NOTHROW(peer("stderr-noise")->logprob(Tokens{"a"}));
}

TEST_CASE("spawn and connect failures") {
  CHECK_THROWS_AS(ExternalScorer::spawn({}), ValidationError);
  CHECK_THROWS_AS(ExternalScorer::spawn({"/nonexistent/scorer-binary"}, 2s), TransportError);
  CHECK_THROWS_AS(ExternalScorer::connect("127.0.0.1", 1, 1s), TransportError);
}

TEST_CASE("TCP transport") {
  const int srv = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(srv >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(::bind(srv, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  REQUIRE(::listen(srv, 1) == 0);
  socklen_t len = sizeof addr;
  ::getsockname(srv, reinterpret_cast<sockaddr*>(&addr), &len);
  const auto port = ntohs(addr.sin_port);

  std::thread server([srv] {
    const int c = ::accept(srv, nullptr, nullptr);
    const std::string hello = R"({"protocol":"orderbkd-scorer","version":1})" "\n";
    (void)!::write(c, hello.data(), hello.size());
    std::string buf;
    char chunk[1024];
    ssize_t n;
    while ((n = ::read(c, chunk, sizeof chunk)) > 0) {
      buf.append(chunk, static_cast<std::size_t>(n));
      std::size_t nl;
      while ((nl = buf.find('\n')) != std::string::npos) {
        const auto req = nlohmann::json::parse(buf.substr(0, nl));
        buf.erase(0, nl + 1);
        const std::string resp = nlohmann::json{{"id", req["id"]}, {"logprob", -2.0}}.dump() + "\n";
        (void)!::write(c, resp.data(), resp.size());
      }
    }
    ::close(c);
  });

  {
    const auto p = ExternalScorer::connect("127.0.0.1", port, 5s);
    CHECK(p->describe().find("tcp:127.0.0.1:") == 0);
    const std::vector<Tokens> batch = {{"a"}, {"b", "c"}};
    CHECK(p->logprob_batch(batch) == std::vector<double>{-2.0, -2.0});
  }
  server.join();
  ::close(srv);
}

TEST_CASE("external scorer drives perplexity and the reposition search") {
  const auto s = ScorerHandle::external(peer());
  CHECK(s.kind() == ScorerHandle::Kind::kExternal);
  const Tokens t = {"simply", "fun"};
  CHECK(perplexity(s, t) == doctest::Approx(std::exp(-expected_logprob(t) / 3.0)).epsilon(1e-12));

  // Length-only scores: every move ties, so the lowest (src, dst) wins.
  using enum Upos;
  const auto r = choose_best_reposition({{"x", "quite", "y"}, {NOUN, ADV, VERB}}, s);
  CHECK(r.source_index == 1);
  CHECK(r.dest_index == 0);
}
