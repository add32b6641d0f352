#include "mpfc/teleop.hpp"

#include <sys/wait.h>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <gtest/gtest.h>

namespace fs = std::filesystem;
namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using namespace std::chrono_literals;

namespace mpfc {
namespace {

// Every frame any client received, checked against the schema afterwards.
std::mutex g_capture_mu;
std::vector<std::string> g_capture;

class CaptureWriter : public ::testing::Environment {
 public:
  void TearDown() override {
    std::ofstream out(MPFC_CAPTURE);
    for (const auto& m : g_capture) out << m << '\n';
  }
};
const auto* const g_env = ::testing::AddGlobalTestEnvironment(new CaptureWriter);

class Client {
 public:
  explicit Client(unsigned short port) : ws_(ioc_) {
    beast::get_lowest_layer(ws_).connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), port));
    ws_.handshake("127.0.0.1", "/ws");
    reader_ = std::thread([this] { read_loop(); });
  }
  ~Client() { drop(); }

  void send(const Json& j) {
    std::lock_guard<std::mutex> lock(write_mu_);
    ws_.text(true);
    ws_.write(asio::buffer(j.dump()));
  }

  /// Next message, optionally of a given type, within the timeout.
  std::optional<Json> next(const std::string& type = "", std::chrono::milliseconds timeout = 2s) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    std::unique_lock<std::mutex> lock(mu_);
    for (;;) {
      while (!inbox_.empty()) {
        Json j = std::move(inbox_.front());
        inbox_.pop_front();
        if (type.empty() || j.at("type") == type) return j;
      }
      if (closed_ || cv_.wait_until(lock, deadline) == std::cv_status::timeout) {
        if (inbox_.empty()) return std::nullopt;
      }
    }
  }

  /// Ticks received until sim time reaches t_end (or the wall timeout).
  std::vector<Json> ticks_until(double t_end, std::chrono::milliseconds timeout = 10s) {
    std::vector<Json> out;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      auto m = next("tick", 500ms);
      if (!m) continue;
      out.push_back(*m);
      if (m->at("time").get<double>() >= t_end) break;
    }
    return out;
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    inbox_.clear();
  }

  /// Drops the connection without a close handshake.
  void drop() {
    if (!reader_.joinable()) return;
    beast::error_code ec;
    beast::get_lowest_layer(ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
    reader_.join();
  }

 private:
  void read_loop() {
    for (;;) {
      beast::flat_buffer buf;
      beast::error_code ec;
      ws_.read(buf, ec);
      std::lock_guard<std::mutex> lock(mu_);
      if (ec) {
        closed_ = true;
        cv_.notify_all();
        return;
      }
      const std::string text = beast::buffers_to_string(buf.data());
      {
        std::lock_guard<std::mutex> cap(g_capture_mu);
        g_capture.push_back(text);
      }
      inbox_.push_back(Json::parse(text));
      cv_.notify_all();
    }
  }

  asio::io_context ioc_;
  websocket::stream<beast::tcp_stream> ws_;
  std::thread reader_;
  std::mutex mu_, write_mu_;
  std::condition_variable cv_;
  std::deque<Json> inbox_;
  bool closed_ = false;
};

SimConfig flat_config() {
  SimConfig c;
  c.footholds = {box_foothold(Vec2(-20, -20), Vec2(20, 20), 0.0)};
  c.commands = {{0.0, Vec2::Zero()}};
  return c;
}

std::map<std::string, std::vector<Foothold>> terrains() {
  return {{"stones",
           {box_foothold(Vec2(-0.5, -0.6), Vec2(0.6, 0.6), 0.0),
            box_foothold(Vec2(0.65, -0.6), Vec2(1.2, 0.6), 0.05),
            box_foothold(Vec2(1.25, -0.6), Vec2(6.0, 0.6), 0.0)}}};
}

class Teleop : public ::testing::Test {
 protected:
  void start(double speed = 1.0) {
    static_dir_ = fs::temp_directory_path() / "mpfc_teleop_static";
    fs::create_directories(static_dir_ / "js");
    std::ofstream(static_dir_ / "index.html") << "<html>teleop</html>\n";
    std::ofstream(static_dir_ / "js" / "app.js") << "console.log(1);\n";
    TeleopOptions opt;
    opt.port = 0;
    opt.static_dir = static_dir_.string();
    opt.speed = speed;
    server_ = std::make_unique<TeleopServer>(flat_config(), terrains(), opt);
    server_->start();
  }
  void TearDown() override {
    if (server_) server_->stop();
  }

  http::response<http::string_body> get(const std::string& target) {
    asio::io_context ioc;
    beast::tcp_stream stream(ioc);
    stream.connect(tcp::endpoint(asio::ip::make_address("127.0.0.1"), server_->port()));
    http::request<http::empty_body> req{http::verb::get, target, 11};
    req.set(http::field::host, "127.0.0.1");
    http::write(stream, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(stream, buf, res);
    return res;
  }

  fs::path static_dir_;
  std::unique_ptr<TeleopServer> server_;
};

TEST(ParseInbound, ClampsToLimits) {
  InboundCommand c = parse_inbound(R"({"type": "set_velocity", "velocity": [3, 4]})", 1.0, 0.5);
  EXPECT_EQ(c.kind, InboundCommand::Kind::kSetVelocity);
  EXPECT_NEAR(c.velocity.norm(), 1.0, 1e-12);
  EXPECT_NEAR(c.velocity.x(), 0.6, 1e-12);
  c = parse_inbound(R"({"type": "set_velocity", "velocity": [0.3, 0]})", 1.0, 0.5);
  EXPECT_EQ(c.velocity, Vec2(0.3, 0));
  c = parse_inbound(R"({"type": "set_yaw_rate", "yaw_rate": -2})", 1.0, 0.5);
  EXPECT_EQ(c.yaw_rate, -0.5);
  EXPECT_EQ(parse_inbound(R"({"type": "set_terrain", "name": "a"})", 1, 1).terrain, "a");
  EXPECT_EQ(parse_inbound(R"({"type": "pause"})", 1, 1).kind, InboundCommand::Kind::kPause);
}

TEST(ParseInbound, RejectsMalformed) {
  for (const char* bad : {"", "[]", R"({"type": 3})", R"({"type": "fly"})",
                          R"({"type": "set_velocity", "velocity": [1]})",
                          R"({"type": "set_velocity"})", R"({"type": "set_terrain"})",
                          R"({"type": "set_yaw_rate", "yaw_rate": "x"})"}) {
    EXPECT_THROW(parse_inbound(bad, 1.0, 0.5), ConfigError) << bad;
  }
}

TEST_F(Teleop, ServesStaticAssets) {
  start();
  auto res = get("/");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(res.body(), "<html>teleop</html>\n");
  EXPECT_EQ(res[http::field::content_type], "text/html");
  res = get("/js/app.js?v=2");
  EXPECT_EQ(res.result(), http::status::ok);
  EXPECT_EQ(res[http::field::content_type], "application/javascript");
  EXPECT_EQ(get("/missing.css").result(), http::status::not_found);
  EXPECT_EQ(get("/../etc/passwd").result(), http::status::bad_request);
}

TEST_F(Teleop, IdlesAtZeroAndBroadcastsAtTwentyHertz) {
  start();
  std::this_thread::sleep_for(300ms);
  Client c(server_->port());
  const auto first = c.next();
  ASSERT_TRUE(first);
  EXPECT_EQ(first->at("type"), "footholds");
  EXPECT_EQ(first->at("footholds").size(), 1u);

  const auto t0 = std::chrono::steady_clock::now();
  int ticks = 0, plans = 0, stats = 0;
  std::vector<Vec3> com;
  while (std::chrono::steady_clock::now() - t0 < 1s) {
    auto m = c.next("", 200ms);
    if (!m) continue;
    if (m->at("type") == "tick") {
      ++ticks;
      EXPECT_EQ(m->at("command").at("velocity").get<Vec2>(), Vec2::Zero());
      EXPECT_EQ(m->at("clients").get<int>(), 1);
      com.push_back(m->at("com").get<Vec3>());
    }
    plans += m->at("type") == "plan";
    stats += m->at("type") == "stats";
  }
  EXPECT_GE(ticks, 20);
  EXPECT_GE(plans, 20);
  EXPECT_GE(stats, 20);
  // Stepping in place: lateral sway only, no forward drift.
  ASSERT_FALSE(com.empty());
  for (const Vec3& p : com) {
    EXPECT_LT(std::abs(p.x() - com.front().x()), 0.01);
    EXPECT_LT(std::abs(p.y() - com.front().y()), 0.1);
  }
}

TEST_F(Teleop, SetVelocityIsTracked) {
  start(4.0);
  Client c(server_->port());
  c.send({{"type", "set_velocity"}, {"velocity", {0.3, 0.0}}});
  auto m = c.next("tick");
  ASSERT_TRUE(m);
  const double t_cmd = m->at("time").get<double>();
  const std::vector<Json> ticks = c.ticks_until(t_cmd + 5.0);
  ASSERT_FALSE(ticks.empty());
  ASSERT_GE(ticks.back().at("time").get<double>(), t_cmd + 5.0);
  // Mean CoM velocity over the last three seconds.
  const Json* a = nullptr;
  for (const Json& t : ticks) {
    if (t.at("time").get<double>() >= t_cmd + 2.0) {
      a = &t;
      break;
    }
  }
  ASSERT_NE(a, nullptr);
  const Json& b = ticks.back();
  const double v = (b.at("com")[0].get<double>() - a->at("com")[0].get<double>()) /
                   (b.at("time").get<double>() - a->at("time").get<double>());
  EXPECT_NEAR(v, 0.3, 0.15 * 0.3);
  EXPECT_EQ(b.at("command").at("velocity").get<Vec2>(), Vec2(0.3, 0.0));
}

TEST_F(Teleop, InboundVelocityIsClampedAndBadMessagesAnswered) {
  start();
  Client c(server_->port());
  c.send({{"type", "set_velocity"}, {"velocity", {5.0, 0.0}}});
  c.send({{"type", "set_yaw_rate"}, {"yaw_rate", 9.0}});
  for (int i = 0; i < 20; ++i) {
    auto m = c.next("tick");
    ASSERT_TRUE(m);
    EXPECT_LE(m->at("command").at("velocity").get<Vec2>().norm(), 1.0 + 1e-12);
    EXPECT_LE(std::abs(m->at("command").at("yaw_rate").get<double>()), 0.5 + 1e-12);
  }
  c.clear();
  c.send(Json{{"type", "jump"}});
  auto e = c.next("error");
  ASSERT_TRUE(e);
  EXPECT_NE(e->at("message").get<std::string>().find("jump"), std::string::npos);
  c.send({{"type", "set_terrain"}, {"name", "nowhere"}});
  EXPECT_TRUE(c.next("error"));
}

TEST_F(Teleop, PauseAndResumeKeepStateContinuous) {
  start(2.0);
  Client c(server_->port());
  c.send({{"type", "set_velocity"}, {"velocity", {0.3, 0.0}}});
  c.ticks_until(1.0);
  c.send(Json{{"type", "pause"}});
  auto ev = c.next("event");
  ASSERT_TRUE(ev);
  EXPECT_EQ(ev->at("event"), "paused");
  c.clear();
  std::vector<Json> paused;
  for (int i = 0; i < 10; ++i) {
    auto m = c.next("tick");
    ASSERT_TRUE(m);
    paused.push_back(*m);
  }
  for (const Json& t : paused) {
    EXPECT_TRUE(t.at("paused").get<bool>());
    EXPECT_EQ(t.at("time"), paused.front().at("time"));
    EXPECT_EQ(t.at("com"), paused.front().at("com"));
  }
  c.send(Json{{"type", "resume"}});
  const double t_pause = paused.back().at("time").get<double>();
  const std::vector<Json> after = c.ticks_until(t_pause + 0.5);
  double prev_t = t_pause;
  Vec3 prev_com = paused.back().at("com").get<Vec3>();
  for (const Json& t : after) {
    const double time = t.at("time").get<double>();
    EXPECT_GE(time, prev_t);
    // 0.3 m/s for at most a few broadcast periods.
    EXPECT_LT((t.at("com").get<Vec3>() - prev_com).head<2>().norm(), 0.05);
    prev_t = time;
    prev_com = t.at("com").get<Vec3>();
  }
  EXPECT_FALSE(after.back().at("paused").get<bool>());
  EXPECT_GT(prev_t, t_pause);
}

TEST_F(Teleop, DriverDisconnectDecaysCommandToZero) {
  start();
  Client watcher(server_->port());
  {
    Client driver(server_->port());
    driver.send({{"type", "set_velocity"}, {"velocity", {0.4, 0.0}}});
    driver.send({{"type", "set_yaw_rate"}, {"yaw_rate", 0.2}});
    std::this_thread::sleep_for(500ms);
    watcher.clear();
    auto m = watcher.next("tick");
    ASSERT_TRUE(m);
    EXPECT_EQ(m->at("command").at("velocity").get<Vec2>(), Vec2(0.4, 0.0));
    EXPECT_EQ(m->at("clients").get<int>(), 2);
    driver.drop();
  }
  const auto dropped = std::chrono::steady_clock::now();
  double t_full = -1, t_zero = -1;
  for (;;) {
    auto m = watcher.next("tick");
    ASSERT_TRUE(m);
    const Vec2 v = m->at("command").at("velocity").get<Vec2>();
    const double w = m->at("command").at("yaw_rate").get<double>();
    if (v.x() == 0.4) t_full = m->at("time").get<double>();
    if (v.isZero() && w == 0.0) {
      t_zero = m->at("time").get<double>();
      break;
    }
    ASSERT_LT(std::chrono::steady_clock::now() - dropped, 3s);
  }
  EXPECT_LE(std::chrono::steady_clock::now() - dropped, 800ms);
  if (t_full >= 0) {
    EXPECT_LE(t_zero - t_full, 0.5);
  }
}

TEST_F(Teleop, TerrainSwitchAndReset) {
  start(2.0);
  Client c(server_->port());
  ASSERT_TRUE(c.next("footholds"));
  c.send({{"type", "set_terrain"}, {"name", "stones"}});
  auto f = c.next("footholds");
  ASSERT_TRUE(f);
  EXPECT_EQ(f->at("terrain"), "stones");
  EXPECT_EQ(f->at("footholds").size(), 3u);
  auto t = c.next("tick");
  ASSERT_TRUE(t);
  EXPECT_EQ(t->at("terrain"), "stones");

  // A late joiner gets the current terrain first.
  Client late(server_->port());
  auto lf = late.next();
  ASSERT_TRUE(lf);
  EXPECT_EQ(lf->at("type"), "footholds");
  EXPECT_EQ(lf->at("terrain"), "stones");

  c.ticks_until(1.0);
  c.send(Json{{"type", "reset"}});
  auto ev = c.next("event");
  ASSERT_TRUE(ev);
  EXPECT_EQ(ev->at("event"), "reset");
  auto after = c.next("tick");
  ASSERT_TRUE(after);
  EXPECT_LT(after->at("time").get<double>(), 0.5);
}

TEST_F(Teleop, PortInUse) {
  start();
  TeleopOptions opt;
  opt.port = server_->port();
  EXPECT_THROW(TeleopServer(flat_config(), {}, opt), BindError);

  const fs::path cfg = fs::temp_directory_path() / "mpfc_teleop_port.json";
  std::ofstream(cfg) << R"({"terrain": {"flat": {}}})";
  const std::string cmd = std::string(MPFC_CLI) + " teleop --config " + cfg.string() +
                          " --port " + std::to_string(server_->port()) + " --for 1 2>/dev/null";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 2);
}

TEST(TeleopCli, ServesAndExits) {
  const fs::path cfg = fs::temp_directory_path() / "mpfc_teleop_cli.json";
  std::ofstream(cfg) << R"({"terrain": {"flat": {}}, "terrains": {"ramp": {"stairs": {"up": 1, "down": 0}}}})";
  const std::string cmd =
      std::string(MPFC_CLI) + " teleop --config " + cfg.string() + " --port 0 --for 0.3";
  FILE* pipe = popen(cmd.c_str(), "r");
  char buf[512] = {};
  const size_t n = fread(buf, 1, sizeof buf - 1, pipe);
  const int status = pclose(pipe);
  EXPECT_NE(std::string(buf, n).find("websocket /ws"), std::string::npos);
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}

}  // namespace
}  // namespace mpfc
