#pragma once

// HTTP + WebSocket front end (Boost.Beast).
//   GET  /meta      model and phantom metadata as JSON
//   POST /simulate  body: request JSON; reply: frame (see protocol.hpp) or JSON error
//   GET  /stream    WebSocket upgrade; each text message is a request, each reply a
//                   binary frame (or a text JSON error), latest-wins

#include <boost/asio/dispatch.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/asio/post.hpp>
#include <boost/asio/strand.hpp>
#include <boost/asio/thread_pool.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <cstdlib>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "ussim/service/engine.hpp"
#include "ussim/service/stream.hpp"

namespace ussim::service {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

inline constexpr const char* kBindEnv = "USSIM_BIND";
inline constexpr const char* kDefaultBind = "127.0.0.1:8080";
inline constexpr const char* kFrameContentType = "application/vnd.ussim.frame";

struct BindAddress {
  std::string host = "127.0.0.1";
  unsigned short port = 8080;
};

// "host:port", ":port" or "port".
inline BindAddress parse_bind(const std::string& s) {
  BindAddress b;
  const auto colon = s.rfind(':');
  std::string port = colon == std::string::npos ? s : s.substr(colon + 1);
  if (colon != std::string::npos && colon > 0) b.host = s.substr(0, colon);
  try {
    std::size_t used = 0;
    const int p = std::stoi(port, &used);
    if (used != port.size() || p < 0 || p > 65535) throw std::out_of_range("port");
    b.port = static_cast<unsigned short>(p);
  } catch (const std::exception&) {
    throw ConfigError("bad bind address '" + s + "' (expected host:port)");
  }
  return b;
}

// Flag, then environment, then the default.
inline std::string resolve_bind(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kBindEnv); env && *env) return env;
  return kDefaultBind;
}

struct ServerOptions {
  std::size_t io_threads = 2;
  std::size_t compute_threads = 1;
};

namespace detail {

struct Shared {
  std::shared_ptr<const SimulationEngine> engine;
  net::thread_pool* compute;
};

class StreamSession : public std::enable_shared_from_this<StreamSession> {
 public:
  StreamSession(tcp::socket&& socket, std::shared_ptr<Shared> shared)
      : ws_(std::move(socket)), shared_(std::move(shared)) {}

  void run(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&StreamSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (!ec) do_read();
  }

  void do_read() { ws_.async_read(buffer_, beast::bind_front_handler(&StreamSession::on_read, shared_from_this())); }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      closed_ = true;
      return;
    }
    std::string msg = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    if (auto next = gate_.offer(std::move(msg))) start(std::move(*next));
    do_read();
  }

  void start(std::string msg) {
    net::post(*shared_->compute, [self = shared_from_this(), msg = std::move(msg)] {
      auto reply = self->shared_->engine->handle(msg);
      net::post(self->ws_.get_executor(), [self, reply = std::move(reply)]() mutable { self->write(std::move(reply)); });
    });
  }

  void write(SimulationEngine::Reply reply) {
    if (closed_) return;
    out_ = std::move(reply.bytes);
    ws_.binary(reply.ok);
    ws_.async_write(net::buffer(out_), beast::bind_front_handler(&StreamSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      closed_ = true;
      return;
    }
    if (auto next = gate_.finish()) start(std::move(*next));
  }

  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  std::shared_ptr<Shared> shared_;
  LatestWins<std::string> gate_;
  std::string out_;
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket&& socket, std::shared_ptr<Shared> shared)
      : stream_(std::move(socket)), shared_(std::move(shared)) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpSession::do_read, shared_from_this()));
  }

 private:
  void do_read() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_, beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    if (websocket::is_upgrade(req_) && req_.target() == "/stream") {
      stream_.expires_never();
      std::make_shared<StreamSession>(stream_.release_socket(), shared_)->run(std::move(req_));
      return;
    }
    respond();
  }

  void reply(http::status status, std::string content_type, std::string body) {
    res_ = {};
    res_.version(req_.version());
    res_.result(status);
    res_.set(http::field::server, "ussim");
    res_.set(http::field::content_type, content_type);
    res_.set(http::field::access_control_allow_origin, "*");
    res_.keep_alive(req_.keep_alive());
    res_.body() = std::move(body);
    res_.prepare_payload();
  }

  void respond() {
    const auto target = req_.target();
    const auto& engine = *shared_->engine;
    if (target == "/meta") {
      if (req_.method() != http::verb::get)
        reply(http::status::method_not_allowed, "application/json", encode_error("method", "use GET"));
      else
        reply(http::status::ok, "application/json", engine.meta().dump());
    } else if (target == "/simulate") {
      if (req_.method() == http::verb::options) {
        reply(http::status::no_content, "text/plain", "");
        res_.set(http::field::access_control_allow_methods, "GET, POST, OPTIONS");
        res_.set(http::field::access_control_allow_headers, "Content-Type");
      } else if (req_.method() != http::verb::post) {
        reply(http::status::method_not_allowed, "application/json", encode_error("method", "use POST"));
      } else {
        auto r = engine.handle(req_.body());
        if (r.ok)
          reply(http::status::ok, kFrameContentType, std::move(r.bytes));
        else
          reply(http::status::bad_request, "application/json", std::move(r.bytes));
      }
    } else {
      reply(http::status::not_found, "application/json",
            encode_error("not_found", "unknown path '" + std::string(target) + "'"));
    }
    http::async_write(stream_, res_, beast::bind_front_handler(&HttpSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) return;
    if (!res_.keep_alive()) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    do_read();
  }

  beast::tcp_stream stream_;
  beast::flat_buffer buffer_;
  std::shared_ptr<Shared> shared_;
  http::request<http::string_body> req_;
  http::response<http::string_body> res_;
};

}  // namespace detail

class Server {
 public:
  Server(std::shared_ptr<const SimulationEngine> engine, const BindAddress& bind, ServerOptions opt = {})
      : compute_(std::max<std::size_t>(1, opt.compute_threads)),
        acceptor_(net::make_strand(ioc_)),
        shared_(std::make_shared<detail::Shared>(detail::Shared{std::move(engine), &compute_})) {
    beast::error_code ec;
    const auto address = net::ip::make_address(bind.host, ec);
    if (ec) throw ConfigError("bad bind host '" + bind.host + "': " + ec.message());
    const tcp::endpoint ep(address, bind.port);
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec)
      throw ConfigError("cannot listen on " + bind.host + ":" + std::to_string(bind.port) + ": " + ec.message());
    do_accept();
    for (std::size_t i = 0; i < std::max<std::size_t>(1, opt.io_threads); ++i) threads_.emplace_back([this] { ioc_.run(); });
  }

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;
  ~Server() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  void stop() {
    if (stopped_) return;
    stopped_ = true;
    ioc_.stop();
    for (auto& t : threads_) t.join();
    compute_.stop();
    compute_.join();
  }

  void wait() {
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

 private:
  void do_accept() {
    acceptor_.async_accept(net::make_strand(ioc_), [this](beast::error_code ec, tcp::socket socket) {
      if (!ec) std::make_shared<detail::HttpSession>(std::move(socket), shared_)->run();
      if (acceptor_.is_open()) do_accept();
    });
  }

  net::io_context ioc_;
  net::thread_pool compute_;
  tcp::acceptor acceptor_;
  std::shared_ptr<detail::Shared> shared_;
  std::vector<std::thread> threads_;
  bool stopped_ = false;
};

}  // namespace ussim::service
