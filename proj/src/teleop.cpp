#include "mpfc/teleop.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <boost/lockfree/spsc_queue.hpp>

namespace mpfc {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

InboundCommand parse_inbound(const std::string& text, double velocity_limit,
                             double yaw_rate_limit) {
  const Json j = parse_json(text, "message");
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string()) {
    throw ConfigError("message: expected an object with a string \"type\"");
  }
  const std::string type = j.at("type").get<std::string>();
  InboundCommand c;
  try {
    if (type == "set_velocity") {
      c.kind = InboundCommand::Kind::kSetVelocity;
      c.velocity = vec_from_json(j.at("velocity"), 2);
      if (!c.velocity.allFinite()) throw ConfigError("set_velocity: non-finite velocity");
      if (c.velocity.norm() > velocity_limit) c.velocity *= velocity_limit / c.velocity.norm();
    } else if (type == "set_yaw_rate") {
      c.kind = InboundCommand::Kind::kSetYawRate;
      c.yaw_rate = j.at("yaw_rate").get<double>();
      if (!std::isfinite(c.yaw_rate)) throw ConfigError("set_yaw_rate: non-finite rate");
      c.yaw_rate = std::clamp(c.yaw_rate, -yaw_rate_limit, yaw_rate_limit);
    } else if (type == "pause") {
      c.kind = InboundCommand::Kind::kPause;
    } else if (type == "resume") {
      c.kind = InboundCommand::Kind::kResume;
    } else if (type == "reset") {
      c.kind = InboundCommand::Kind::kReset;
    } else if (type == "set_terrain") {
      c.kind = InboundCommand::Kind::kSetTerrain;
      c.terrain = j.at("name").get<std::string>();
    } else {
      throw ConfigError("message: unknown type \"" + type + "\"");
    }
  } catch (const Json::exception& e) {
    throw ConfigError(type + ": " + e.what());
  }
  return c;
}

namespace {

Vec2 com_velocity(const Simulator& sim) {
  const AlipParams& p = sim.config().controller.params;
  const AlipState& x = sim.state().x;
  const double mH = p.mass * p.com_height;
  const Vec2 local(x(3) / mH, -x(2) / mH);
  const double c = std::cos(sim.state().heading), s = std::sin(sim.state().heading);
  return Vec2(c * local.x() - s * local.y(), s * local.x() + c * local.y());
}

}  // namespace

Json tick_message(const Simulator& sim, const TickLog& log, const TeleopFlags& flags) {
  const SimState& st = sim.state();
  return {{"type", "tick"},
          {"time", st.clock},
          {"step", st.step},
          {"phase", st.phase == Phase::kSingleStance ? "single" : "double"},
          {"stance", st.stance},
          {"paused", flags.paused},
          {"terrain", flags.terrain},
          {"clients", flags.clients},
          {"com", sim.com_position()},
          {"com_velocity", com_velocity(sim)},
          {"x", st.x},
          {"stance_foot", st.stance_pos},
          {"swing_foot", log.swing_pos},
          {"heading", st.heading},
          {"u", st.u},
          {"command", {{"velocity", st.command.velocity}, {"yaw_rate", st.command.yaw_rate}}}};
}

Json plan_message(const Simulator& sim, const TickLog& log) {
  const SimState& st = sim.state();
  Json assignment = Json::array();
  double objective = 0.0;
  if (st.last_solution) {
    assignment = st.last_solution->assignment;
    objective = st.last_solution->objective;
  }
  return {{"type", "plan"},
          {"time", st.clock},
          {"footsteps", st.last_plan_world},
          {"assignment", assignment},
          {"objective", objective},
          {"target", st.target},
          {"foothold", st.target_foothold},
          {"solved", log.solved},
          {"fallback", log.fallback}};
}

Json stats_message(const TickLog& log, double solve_rate) {
  return {{"type", "stats"},
          {"time", log.time},
          {"solved", log.solved},
          {"fallback", log.fallback},
          {"solve_time", log.solved ? log.stats.wall_time : 0.0},
          {"nodes", log.solved ? log.stats.nodes_explored : 0},
          {"qp_solves", log.solved ? log.stats.qp_solves : 0},
          {"solve_rate", solve_rate}};
}

Json footholds_message(const std::vector<Foothold>& footholds, const std::string& terrain) {
  return {{"type", "footholds"}, {"terrain", terrain}, {"footholds", footholds}};
}

Json event_message(const std::string& event, const std::string& message, double time) {
  return {{"type", "event"}, {"event", event}, {"message", message}, {"time", time}};
}

Json error_message(const std::string& message) {
  return {{"type", "error"}, {"message", message}};
}

// ------------------------------------------------------------------ server

namespace {

using Frame = std::shared_ptr<const std::string>;

std::string mime_type(const std::string& ext) {
  static const std::map<std::string, std::string> types = {
      {".html", "text/html"},        {".htm", "text/html"},
      {".js", "application/javascript"}, {".mjs", "application/javascript"},
      {".css", "text/css"},          {".json", "application/json"},
      {".svg", "image/svg+xml"},     {".png", "image/png"},
      {".ico", "image/x-icon"},      {".map", "application/json"},
      {".wasm", "application/wasm"}, {".txt", "text/plain"}};
  const auto it = types.find(ext);
  return it == types.end() ? "application/octet-stream" : it->second;
}

class WsSession;

// Connected websocket sessions; touched only on the io thread.
struct Hub {
  std::set<WsSession*> sessions;
  WsSession* driver = nullptr;  // last sender of a motion command
  Frame footholds;
  std::function<void(InboundCommand)> push;
  std::function<void(int)> on_count;
  double velocity_limit = 1.0, yaw_rate_limit = 0.5;
  std::set<std::string> terrain_names;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Hub& hub) : ws_(std::move(socket)), hub_(hub) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
      if (ec) return;
      self->hub_.sessions.insert(self.get());
      self->registered_ = true;
      self->hub_.on_count(static_cast<int>(self->hub_.sessions.size()));
      if (self->hub_.footholds) self->send(self->hub_.footholds);
      self->read();
    });
  }

  void send(Frame f) {
    if (queue_.size() >= 256) return;  // slow client: drop
    queue_.push_back(std::move(f));
    if (queue_.size() == 1) write();
  }

 private:
  void read() {
    ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close();
      const std::string text = beast::buffers_to_string(self->buffer_.data());
      self->buffer_.consume(self->buffer_.size());
      try {
        InboundCommand c =
            parse_inbound(text, self->hub_.velocity_limit, self->hub_.yaw_rate_limit);
        if (c.kind == InboundCommand::Kind::kSetTerrain &&
            !self->hub_.terrain_names.count(c.terrain)) {
          throw ConfigError("set_terrain: unknown terrain \"" + c.terrain + "\"");
        }
        if (c.kind == InboundCommand::Kind::kSetVelocity ||
            c.kind == InboundCommand::Kind::kSetYawRate) {
          self->hub_.driver = self.get();
        }
        self->hub_.push(std::move(c));
      } catch (const Error& e) {
        self->send(std::make_shared<const std::string>(error_message(e.what()).dump()));
      }
      self->read();
    });
  }

  void write() {
    ws_.text(true);
    ws_.async_write(asio::buffer(*queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      if (ec) return self->close();
                      self->queue_.pop_front();
                      if (!self->queue_.empty()) self->write();
                    });
  }

  void close() {
    if (!registered_) return;
    registered_ = false;
    hub_.sessions.erase(this);
    const int n = static_cast<int>(hub_.sessions.size());
    hub_.on_count(n);
    // Dead man: the client driving the robot left, or nobody is watching.
    if (n == 0 || hub_.driver == this) {
      hub_.driver = nullptr;
      hub_.push(InboundCommand{InboundCommand::Kind::kDeadMan, {}, 0.0, {}});
    }
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::deque<Frame> queue_;
  Hub& hub_;
  bool registered_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, Hub& hub, std::filesystem::path root)
      : stream_(std::move(socket)), hub_(hub), root_(std::move(root)) {}

  void run() { read(); }

 private:
  void read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     [self = shared_from_this()](beast::error_code ec, std::size_t) {
                       if (ec) return;
                       self->handle();
                     });
  }

  void handle() {
    if (websocket::is_upgrade(req_)) {
      if (req_.target() == "/ws") {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), hub_)->run(std::move(req_));
      }
      return;
    }
    auto res = std::make_shared<http::response<http::string_body>>(respond());
    http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec,
                                                                      std::size_t) {
      if (ec || res->need_eof()) {
        beast::error_code ignored;
        self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
        return;
      }
      self->read();
    });
  }

  http::response<http::string_body> respond() {
    auto reply = [&](http::status status, const std::string& type, std::string body) {
      http::response<http::string_body> res{status, req_.version()};
      res.set(http::field::content_type, type);
      res.keep_alive(req_.keep_alive());
      res.body() = std::move(body);
      res.prepare_payload();
      return res;
    };
    if (req_.method() != http::verb::get && req_.method() != http::verb::head) {
      return reply(http::status::bad_request, "text/plain", "unsupported method\n");
    }
    std::string target(req_.target());
    target = target.substr(0, target.find('?'));
    if (target.empty() || target[0] != '/' || target.find("..") != std::string::npos) {
      return reply(http::status::bad_request, "text/plain", "bad path\n");
    }
    if (target.back() == '/') target += "index.html";
    const std::filesystem::path path = root_ / target.substr(1);
    std::ifstream in(path, std::ios::binary);
    if (!in) return reply(http::status::not_found, "text/plain", "not found\n");
    std::ostringstream body;
    body << in.rdbuf();
    auto res = reply(http::status::ok, mime_type(path.extension().string()), body.str());
    if (req_.method() == http::verb::head) res.body().clear();
    return res;
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
  Hub& hub_;
  std::filesystem::path root_;
};

}  // namespace

struct TeleopServer::Impl {
  SimConfig cfg;
  std::map<std::string, std::vector<Foothold>> terrains;
  TeleopOptions opt;
  asio::io_context ioc{1};
  tcp::acceptor acceptor{ioc};
  Hub hub;
  boost::lockfree::spsc_queue<InboundCommand, boost::lockfree::capacity<1024>> inbox;
  std::atomic<bool> stopping{false};
  std::atomic<int> clients{0};
  std::thread net_thread, sim_thread;

  void accept() {
    acceptor.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      std::make_shared<HttpSession>(std::move(socket), hub, opt.static_dir)->run();
      accept();
    });
  }

  void broadcast(std::vector<Frame> frames, bool footholds) {
    asio::post(ioc, [this, frames = std::move(frames), footholds] {
      if (footholds && !frames.empty()) hub.footholds = frames.front();
      for (WsSession* s : hub.sessions) {
        for (const Frame& f : frames) s->send(f);
      }
    });
  }

  static Frame frame(const Json& j) { return std::make_shared<const std::string>(j.dump()); }

  void simulate() {
    std::string terrain = "default";
    SimConfig base = cfg;
    auto make = [&] { return std::make_unique<Simulator>(base); };
    std::unique_ptr<Simulator> sim = make();
    broadcast({frame(footholds_message(base.footholds, terrain))}, true);

    CommandPoint cmd;
    if (!cfg.commands.empty()) cmd.stance_width = cfg.commands.front().stance_width;
    bool paused = false, decaying = false;
    Vec2 decay_v = Vec2::Zero();
    double decay_w = 0.0;
    TickLog last;
    std::deque<bool> recent_solves;

    const double period = cfg.controller_period;
    const auto wall_period = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
        std::chrono::duration<double>(period / opt.speed));
    const long every = std::max(1L, std::lround(1.0 / (opt.broadcast_rate * period)));
    auto next = std::chrono::steady_clock::now();
    long loop = 0;

    while (!stopping.load()) {
      InboundCommand in;
      while (inbox.pop(in)) {
        switch (in.kind) {
          case InboundCommand::Kind::kSetVelocity:
            cmd.velocity = in.velocity;
            decaying = false;
            break;
          case InboundCommand::Kind::kSetYawRate:
            cmd.yaw_rate = in.yaw_rate;
            decaying = false;
            break;
          case InboundCommand::Kind::kPause:
            paused = true;
            broadcast({frame(event_message("paused", "", sim->state().clock))}, false);
            break;
          case InboundCommand::Kind::kResume:
            paused = false;
            broadcast({frame(event_message("resumed", "", sim->state().clock))}, false);
            break;
          case InboundCommand::Kind::kReset:
            sim = make();
            last = {};
            broadcast({frame(event_message("reset", "", 0.0))}, false);
            break;
          case InboundCommand::Kind::kSetTerrain:
            terrain = in.terrain;
            base.footholds = terrains.at(terrain);
            sim->set_footholds(base.footholds);
            broadcast({frame(footholds_message(base.footholds, terrain))}, true);
            break;
          case InboundCommand::Kind::kDeadMan:
            decaying = true;
            decay_v = cmd.velocity / opt.deadman_time;
            decay_w = cmd.yaw_rate / opt.deadman_time;
            break;
        }
      }

      if (!paused) {
        if (decaying) {
          const double dt = period;
          auto toward_zero = [](double v, double rate) {
            return v > 0 ? std::max(0.0, v - std::abs(rate)) : std::min(0.0, v + std::abs(rate));
          };
          cmd.velocity.x() = toward_zero(cmd.velocity.x(), decay_v.x() * dt);
          cmd.velocity.y() = toward_zero(cmd.velocity.y(), decay_v.y() * dt);
          cmd.yaw_rate = toward_zero(cmd.yaw_rate, decay_w * dt);
          if (cmd.velocity.isZero() && cmd.yaw_rate == 0.0) decaying = false;
        }
        try {
          last = sim->step(cmd);
          recent_solves.push_back(last.solved);
          if (recent_solves.size() > 100) recent_solves.pop_front();
        } catch (const ControllerFailure& e) {
          broadcast({frame(event_message("failure", e.what(), sim->state().clock))}, false);
          sim = make();
          last = {};
        }
      }

      next += wall_period;
      const auto now = std::chrono::steady_clock::now();
      const bool late = now > next + wall_period;
      if (++loop % every == 0 && !late) {
        TeleopFlags flags{paused, terrain, clients.load()};
        double rate = 0.0;
        for (bool s : recent_solves) rate += s;
        if (!recent_solves.empty()) rate /= static_cast<double>(recent_solves.size()) * period;
        broadcast({frame(tick_message(*sim, last, flags)), frame(plan_message(*sim, last)),
                   frame(stats_message(last, rate))},
                  false);
      }
      if (now < next) {
        std::this_thread::sleep_until(next);
      } else if (now - next > std::chrono::milliseconds(250)) {
        next = now;  // too far behind to catch up in real time
      }
    }
  }
};

TeleopServer::TeleopServer(SimConfig cfg, std::map<std::string, std::vector<Foothold>> terrains,
                           TeleopOptions opt)
    : impl_(std::make_unique<Impl>()) {
  if (!(opt.speed > 0) || !(opt.broadcast_rate > 0) || !(opt.deadman_time > 0)) {
    throw ConfigError("teleop: speed, broadcast rate and dead-man time must be positive");
  }
  cfg.validate();
  impl_->cfg = std::move(cfg);
  terrains.emplace("default", impl_->cfg.footholds);
  impl_->terrains = std::move(terrains);
  impl_->opt = std::move(opt);
  Hub& hub = impl_->hub;
  hub.velocity_limit = impl_->cfg.velocity_limit;
  hub.yaw_rate_limit = impl_->cfg.yaw_rate_limit;
  for (const auto& [name, _] : impl_->terrains) hub.terrain_names.insert(name);
  hub.push = [this](InboundCommand c) {
    if (!impl_->inbox.push(std::move(c))) std::cerr << "teleop: inbound queue full, dropped\n";
  };
  hub.on_count = [this](int n) { impl_->clients.store(n); };

  beast::error_code ec;
  const auto address = asio::ip::make_address(impl_->opt.address, ec);
  if (ec) throw ConfigError("teleop: bad address " + impl_->opt.address);
  const tcp::endpoint ep(address, impl_->opt.port);
  tcp::acceptor& a = impl_->acceptor;
  a.open(ep.protocol(), ec);
  if (!ec) a.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) a.bind(ep, ec);
  if (!ec) a.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) {
    throw BindError("teleop: cannot listen on " + impl_->opt.address + ":" +
                    std::to_string(impl_->opt.port) + ": " + ec.message());
  }
}

TeleopServer::~TeleopServer() { stop(); }

unsigned short TeleopServer::port() const { return impl_->acceptor.local_endpoint().port(); }

void TeleopServer::start() {
  impl_->accept();
  impl_->net_thread = std::thread([this] {
    auto guard = asio::make_work_guard(impl_->ioc);
    impl_->ioc.run();
  });
  impl_->sim_thread = std::thread([this] { impl_->simulate(); });
}

void TeleopServer::wait() {
  if (impl_->sim_thread.joinable()) impl_->sim_thread.join();
  if (impl_->net_thread.joinable()) impl_->net_thread.join();
}

void TeleopServer::stop() {
  impl_->stopping.store(true);
  impl_->ioc.stop();
  wait();
}

}  // namespace mpfc
