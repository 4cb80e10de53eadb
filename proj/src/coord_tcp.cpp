#include "cusco/coord_tcp.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

namespace cusco::coord::tcp {

namespace {

std::string errno_text() { return std::strerror(errno); }

void set_nonblocking(int fd)
{
	int flags = fcntl(fd, F_GETFL, 0);
	fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

sockaddr_in resolve(const Endpoint &ep)
{
	addrinfo hints{};
	hints.ai_family = AF_INET;
	hints.ai_socktype = SOCK_STREAM;
	addrinfo *res = nullptr;
	const auto host = ep.host.empty() ? std::string("0.0.0.0") : ep.host;
	if (int rc = getaddrinfo(host.c_str(), nullptr, &hints, &res); rc != 0 || !res)
		throw IoError("cannot resolve " + host + ": " + gai_strerror(rc));
	sockaddr_in addr = *reinterpret_cast<sockaddr_in *>(res->ai_addr);
	freeaddrinfo(res);
	addr.sin_port = htons(ep.port);
	return addr;
}

} // namespace

Endpoint Endpoint::parse(std::string_view text)
{
	auto colon = text.rfind(':');
	if (colon == std::string_view::npos)
		throw ConfigError("expected host:port, got '" + std::string(text) + "'");
	Endpoint ep;
	ep.host = std::string(text.substr(0, colon));
	const auto port = std::string(text.substr(colon + 1));
	try {
		std::size_t used = 0;
		auto v = std::stoul(port, &used);
		if (used != port.size() || v > 65535)
			throw std::out_of_range("port");
		ep.port = static_cast<std::uint16_t>(v);
	} catch (const std::logic_error &) {
		throw ConfigError("bad port in '" + std::string(text) + "'");
	}
	return ep;
}

TcpConnection::~TcpConnection()
{
	if (fd_ >= 0)
		::close(fd_);
}

std::unique_ptr<TcpConnection> TcpConnection::connect(const Endpoint &ep, int timeout_ms)
{
	auto addr = resolve(ep);
	int fd = ::socket(AF_INET, SOCK_STREAM, 0);
	if (fd < 0)
		throw IoError("socket: " + errno_text());
	set_nonblocking(fd);
	int rc = ::connect(fd, reinterpret_cast<sockaddr *>(&addr), sizeof addr);
	if (rc < 0 && errno != EINPROGRESS) {
		auto msg = errno_text();
		::close(fd);
		throw IoError("connect " + ep.str() + ": " + msg);
	}
	if (rc < 0) {
		pollfd p{fd, POLLOUT, 0};
		if (::poll(&p, 1, timeout_ms) <= 0) {
			::close(fd);
			throw IoError("connect " + ep.str() + ": timed out");
		}
		int err = 0;
		socklen_t len = sizeof err;
		getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
		if (err != 0) {
			::close(fd);
			throw IoError("connect " + ep.str() + ": " + std::strerror(err));
		}
	}
	int one = 1;
	setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
	return std::make_unique<TcpConnection>(fd);
}

void TcpConnection::send(const Message &m)
{
	if (closed_)
		return;
	const auto frame = encode(m);
	std::size_t off = 0;
	while (off < frame.size()) {
		auto n = ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
		if (n > 0) {
			off += static_cast<std::size_t>(n);
			continue;
		}
		if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
			pollfd p{fd_, POLLOUT, 0};
			if (::poll(&p, 1, 1000) > 0)
				continue;
		}
		closed_ = true;
		return;
	}
}

bool TcpConnection::pump()
{
	std::uint8_t buf[8192];
	while (!closed_) {
		auto n = ::recv(fd_, buf, sizeof buf, 0);
		if (n > 0) {
			reader_.feed(ByteView(buf, static_cast<std::size_t>(n)));
			continue;
		}
		if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK))
			break;
		if (n < 0 && errno == EINTR)
			continue;
		closed_ = true;
	}
	return !closed_;
}

TcpListener::TcpListener(const Endpoint &ep)
{
	auto addr = resolve(ep);
	fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
	if (fd_ < 0)
		throw IoError("socket: " + errno_text());
	int one = 1;
	setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
	if (::bind(fd_, reinterpret_cast<sockaddr *>(&addr), sizeof addr) < 0 || ::listen(fd_, 8) < 0) {
		auto msg = errno_text();
		::close(fd_);
		throw IoError("listen " + ep.str() + ": " + msg);
	}
	set_nonblocking(fd_);
	socklen_t len = sizeof addr;
	getsockname(fd_, reinterpret_cast<sockaddr *>(&addr), &len);
	port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener()
{
	if (fd_ >= 0)
		::close(fd_);
}

std::unique_ptr<TcpConnection> TcpListener::accept()
{
	int fd = ::accept(fd_, nullptr, nullptr);
	if (fd < 0)
		return nullptr;
	set_nonblocking(fd);
	int one = 1;
	setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
	return std::make_unique<TcpConnection>(fd);
}

std::optional<Message> TcpChannel::receive_until(std::int64_t deadline_ns)
{
	while (true) {
		if (auto m = conn_.next())
			return m;
		const auto left = deadline_ns - clock_.now_ns();
		if (left <= 0 || conn_.closed())
			return std::nullopt;
		pollfd p{conn_.fd(), POLLIN, 0};
		::poll(&p, 1, static_cast<int>(std::max<std::int64_t>(1, left / kNsPerMs)));
		conn_.pump();
	}
}

// ---------------------------------------------------------------------------

CoordRuntime::CoordRuntime(Agent &agent, const Clock &clock, Options opts, EventSink sink)
    : agent_(agent), clock_(clock), opts_(std::move(opts)), sink_(std::move(sink))
{
	if (opts_.listen)
		listener_ = std::make_unique<TcpListener>(*opts_.listen);
	if (::pipe(wake_) != 0)
		throw IoError("pipe: " + errno_text());
	set_nonblocking(wake_[0]);
	thread_ = std::jthread([this](std::stop_token st) { run(st); });
}

CoordRuntime::~CoordRuntime()
{
	stop();
	::close(wake_[0]);
	::close(wake_[1]);
}

std::uint16_t CoordRuntime::listen_port() const { return listener_ ? listener_->port() : 0; }

void CoordRuntime::stop()
{
	if (!thread_.joinable())
		return;
	{
		std::lock_guard lock(mutex_);
		for (auto &[link, c] : conns_)
			c->send(Message{0, Uuid{}, Bye{}});
	}
	thread_.request_stop();
	char b = 1;
	[[maybe_unused]] auto n = ::write(wake_[1], &b, 1);
	thread_.join();
}

void CoordRuntime::dispatch(const std::vector<Outgoing> &out)
{
	{
		std::lock_guard lock(mutex_);
		send_locked(out);
	}
	char b = 1;
	[[maybe_unused]] auto n = ::write(wake_[1], &b, 1);
}

void CoordRuntime::send_locked(const std::vector<Outgoing> &out)
{
	for (const auto &o : out) {
		auto it = conns_.find(o.link);
		if (it != conns_.end())
			it->second->send(o.msg);
	}
}

void CoordRuntime::flush_events_locked()
{
	for (const auto &e : agent_.take_events())
		if (sink_)
			sink_(e);
}

void CoordRuntime::run(std::stop_token st)
{
	while (!st.stop_requested()) {
		std::vector<pollfd> fds;
		std::vector<LinkId> links;
		int timeout_ms = 100;
		{
			std::lock_guard lock(mutex_);
			const auto now = clock_.now_ns();
			if (opts_.leader && conns_.empty() && now >= next_connect_) {
				next_connect_ = now + opts_.reconnect_ns;
				try {
					auto c = TcpConnection::connect(*opts_.leader, 500);
					const auto link = next_link_++;
					conns_[link] = std::move(c);
					send_locked(agent_.on_connect(link, clock_.now_ns()));
				} catch (const IoError &) {
				}
			}
			send_locked(agent_.poll(clock_.now_ns()));
			flush_events_locked();
			if (auto w = agent_.next_wakeup()) {
				auto ms = (*w - clock_.now_ns()) / kNsPerMs;
				timeout_ms = static_cast<int>(std::clamp<std::int64_t>(ms, 0, 100));
			}
			fds.push_back({wake_[0], POLLIN, 0});
			if (listener_)
				fds.push_back({listener_->fd(), POLLIN, 0});
			for (auto &[link, c] : conns_) {
				fds.push_back({c->fd(), POLLIN, 0});
				links.push_back(link);
			}
		}
		::poll(fds.data(), fds.size(), timeout_ms);
		char drain[64];
		while (::read(wake_[0], drain, sizeof drain) > 0) {
		}
		std::lock_guard lock(mutex_);
		if (listener_ && (fds[1].revents & POLLIN)) {
			while (auto c = listener_->accept()) {
				const auto link = next_link_++;
				conns_[link] = std::move(c);
				send_locked(agent_.on_connect(link, clock_.now_ns()));
			}
		}
		const std::size_t base = listener_ ? 2 : 1;
		for (std::size_t i = 0; i < links.size(); ++i) {
			if (!(fds[base + i].revents & (POLLIN | POLLHUP | POLLERR)))
				continue;
			auto it = conns_.find(links[i]);
			if (it == conns_.end())
				continue;
			auto &c = *it->second;
			c.pump();
			try {
				while (auto m = c.next())
					send_locked(agent_.on_message(links[i], *m, clock_.now_ns()));
			} catch (const ProtocolError &) {
				// Malformed stream: drop the connection, the peer reconnects.
				conns_.erase(it);
				continue;
			}
			if (c.closed())
				conns_.erase(it);
		}
		flush_events_locked();
	}
}

} // namespace cusco::coord::tcp
