#pragma once

#include <mutex>
#include <stop_token>
#include <thread>

#include "cusco/coord.hpp"

// Coordination over plain TCP. The LAN link is assumed isolated; there is no
// transport security.
namespace cusco::coord::tcp {

struct Endpoint {
	std::string host;
	std::uint16_t port = 0;
	// "host:port"; throws ConfigError.
	static Endpoint parse(std::string_view text);
	std::string str() const { return host + ":" + std::to_string(port); }
};

class TcpConnection {
public:
	explicit TcpConnection(int fd) : fd_(fd) {}
	~TcpConnection();
	TcpConnection(const TcpConnection &) = delete;
	TcpConnection &operator=(const TcpConnection &) = delete;

	// Throws IoError.
	static std::unique_ptr<TcpConnection> connect(const Endpoint &ep, int timeout_ms);

	void send(const Message &m);
	// Reads whatever is available without blocking; false once the peer closed.
	bool pump();
	std::optional<Message> next() { return reader_.next(); }
	int fd() const { return fd_; }
	bool closed() const { return closed_; }

private:
	int fd_;
	bool closed_ = false;
	FrameReader reader_;
};

class TcpListener {
public:
	explicit TcpListener(const Endpoint &ep);
	~TcpListener();
	TcpListener(const TcpListener &) = delete;
	TcpListener &operator=(const TcpListener &) = delete;

	std::uint16_t port() const { return port_; }
	int fd() const { return fd_; }
	std::unique_ptr<TcpConnection> accept();

private:
	int fd_ = -1;
	std::uint16_t port_ = 0;
};

// Channel for sync_clocks over one connection.
class TcpChannel final : public Channel {
public:
	TcpChannel(TcpConnection &conn, const Clock &clock) : conn_(conn), clock_(clock) {}
	void send(const Message &m) override { conn_.send(m); }
	std::optional<Message> receive_until(std::int64_t deadline_ns) override;

private:
	TcpConnection &conn_;
	const Clock &clock_;
};

// Runs an agent on a background thread. A leader accepts followers on
// `listen`; a follower keeps (re)connecting to `leader`. All agent access
// goes through with_agent() so callers can schedule from other threads.
class CoordRuntime {
public:
	struct Options {
		std::optional<Endpoint> listen;
		std::optional<Endpoint> leader;
		std::int64_t reconnect_ns = kNsPerSec;
	};
	using EventSink = std::function<void(const CoordEvent &)>;

	CoordRuntime(Agent &agent, const Clock &clock, Options opts, EventSink sink = {});
	~CoordRuntime();

	std::uint16_t listen_port() const;

	template <class F> auto with_agent(F &&f)
	{
		std::lock_guard lock(mutex_);
		return f(agent_);
	}
	// Sends messages produced outside the agent callbacks (schedule()).
	void dispatch(const std::vector<Outgoing> &out);
	void stop();

private:
	void run(std::stop_token st);
	void send_locked(const std::vector<Outgoing> &out);
	void flush_events_locked();

	Agent &agent_;
	const Clock &clock_;
	Options opts_;
	EventSink sink_;
	std::mutex mutex_;
	std::unique_ptr<TcpListener> listener_;
	std::map<LinkId, std::unique_ptr<TcpConnection>> conns_;
	LinkId next_link_ = 1;
	std::int64_t next_connect_ = 0;
	int wake_[2] = {-1, -1};
	std::jthread thread_;
};

} // namespace cusco::coord::tcp
