#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <queue>
#include <random>

#include "cusco/coord.hpp"

// Deterministic discrete-event network for exercising the coordination
// agents. Global time is the simulator's; each node sees it through its own
// clock, shifted by a fixed offset. Messages are encoded on send and decoded
// on delivery so the wire codec sits on every path.
namespace cusco::coord::sim {

using NodeId = std::uint32_t;

struct Direction {
	std::int64_t latency_ns = kNsPerMs;
	// Uniform extra delay in [0, jitter_ns].
	std::int64_t jitter_ns = 0;
	double drop_prob = 0.0;
	double dup_prob = 0.0;
	// Per-message latencies consumed before `latency_ns` applies.
	std::deque<std::int64_t> script;
};

class SimNetwork;

// local = global + offset
class SimClock final : public Clock {
public:
	SimClock(const SimNetwork &net, std::int64_t offset_ns) : net_(net), offset_(offset_ns) {}
	std::int64_t now_ns() const override;
	std::int64_t offset_ns() const { return offset_; }

private:
	const SimNetwork &net_;
	std::int64_t offset_;
};

class SimNetwork {
public:
	using Handler = std::function<void(LinkId, const Message &)>;

	explicit SimNetwork(std::uint64_t seed = 1) : rng_(seed) {}
	SimNetwork(const SimNetwork &) = delete;
	SimNetwork &operator=(const SimNetwork &) = delete;

	NodeId add_node(std::int64_t clock_offset_ns);
	const SimClock &clock(NodeId n) const { return *nodes_.at(n).clock; }
	void set_handler(NodeId n, Handler h) { nodes_.at(n).handler = std::move(h); }

	// Bidirectional link; returns the link ids as seen from a and from b.
	std::pair<LinkId, LinkId> connect(NodeId a, NodeId b, Direction a_to_b, Direction b_to_a);
	Direction &direction(NodeId from, LinkId link);
	// Drops everything in both directions while set.
	void set_partitioned(NodeId a, LinkId link, bool partitioned);

	void send(NodeId from, LinkId link, const Message &m);
	// Runs `fn` at global time `t` (clamped to now).
	void at(std::int64_t t, std::function<void()> fn);

	std::int64_t now() const { return now_; }
	bool step();
	void run_until(std::int64_t t);
	std::optional<std::int64_t> next_event_time() const;

	std::uint64_t delivered() const { return delivered_; }
	std::uint64_t dropped() const { return dropped_; }

private:
	struct Endpoint {
		NodeId peer;
		LinkId peer_link;
		std::shared_ptr<Direction> out;
		std::shared_ptr<bool> partitioned;
	};
	struct Node {
		std::unique_ptr<SimClock> clock;
		Handler handler;
		std::vector<Endpoint> links;
	};
	struct Timed {
		std::int64_t t;
		std::uint64_t order;
		std::function<void()> fn;
		bool operator>(const Timed &o) const { return t != o.t ? t > o.t : order > o.order; }
	};

	std::vector<Node> nodes_;
	std::priority_queue<Timed, std::vector<Timed>, std::greater<>> queue_;
	std::int64_t now_ = 0;
	std::uint64_t order_ = 0;
	std::uint64_t delivered_ = 0;
	std::uint64_t dropped_ = 0;
	std::mt19937_64 rng_;
};

// Drives an agent on one node: delivers messages, sends its output, and
// wakes it up when it asks to be polled.
class SimHost {
public:
	SimHost(SimNetwork &net, NodeId node, Agent &agent);

	void connect(LinkId link);
	// Lets the test inject actions (e.g. a leader schedule) at the current time.
	void send_all(const std::vector<Outgoing> &out);
	void reschedule();
	std::vector<CoordEvent> &events() { return events_; }
	std::int64_t local_now() const { return net_.clock(node_).now_ns(); }

private:
	void handle(std::vector<Outgoing> out);

	SimNetwork &net_;
	NodeId node_;
	Agent &agent_;
	std::uint64_t generation_ = 0;
	std::vector<CoordEvent> events_;
};

// Blocking Channel over the simulator for sync_clocks: receiving runs the
// simulation forward until a message arrives on the link or the deadline.
class SimChannel final : public Channel {
public:
	SimChannel(SimNetwork &net, NodeId node, LinkId link);
	void send(const Message &m) override;
	std::optional<Message> receive_until(std::int64_t deadline_ns) override;

private:
	SimNetwork &net_;
	NodeId node_;
	LinkId link_;
	std::deque<Message> inbox_;
};

// Answers TIME_REQ with t2 = t3 = receive time.
void serve_time(SimNetwork &net, NodeId node);

} // namespace cusco::coord::sim
