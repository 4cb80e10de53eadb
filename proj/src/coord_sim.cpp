#include "cusco/coord_sim.hpp"

namespace cusco::coord::sim {

std::int64_t SimClock::now_ns() const { return net_.now() + offset_; }

NodeId SimNetwork::add_node(std::int64_t clock_offset_ns)
{
	Node n;
	n.clock = std::make_unique<SimClock>(*this, clock_offset_ns);
	nodes_.push_back(std::move(n));
	return static_cast<NodeId>(nodes_.size() - 1);
}

std::pair<LinkId, LinkId> SimNetwork::connect(NodeId a, NodeId b, Direction a_to_b, Direction b_to_a)
{
	auto part = std::make_shared<bool>(false);
	const auto la = static_cast<LinkId>(nodes_.at(a).links.size());
	const auto lb = static_cast<LinkId>(nodes_.at(b).links.size() + (a == b ? 1 : 0));
	nodes_.at(a).links.push_back({b, lb, std::make_shared<Direction>(std::move(a_to_b)), part});
	nodes_.at(b).links.push_back({a, la, std::make_shared<Direction>(std::move(b_to_a)), part});
	return {la, lb};
}

Direction &SimNetwork::direction(NodeId from, LinkId link) { return *nodes_.at(from).links.at(link).out; }

void SimNetwork::set_partitioned(NodeId a, LinkId link, bool partitioned)
{
	*nodes_.at(a).links.at(link).partitioned = partitioned;
}

void SimNetwork::send(NodeId from, LinkId link, const Message &m)
{
	const auto &ep = nodes_.at(from).links.at(link);
	auto &dir = *ep.out;
	if (*ep.partitioned || (dir.drop_prob > 0 && std::uniform_real_distribution<>(0, 1)(rng_) < dir.drop_prob)) {
		dropped_++;
		return;
	}
	const int copies = dir.dup_prob > 0 && std::uniform_real_distribution<>(0, 1)(rng_) < dir.dup_prob ? 2 : 1;
	const auto frame = std::make_shared<Bytes>(encode(m));
	for (int c = 0; c < copies; ++c) {
		std::int64_t lat = dir.latency_ns;
		if (!dir.script.empty()) {
			lat = dir.script.front();
			dir.script.pop_front();
		}
		if (dir.jitter_ns > 0)
			lat += std::uniform_int_distribution<std::int64_t>(0, dir.jitter_ns)(rng_);
		const auto to = ep.peer;
		const auto to_link = ep.peer_link;
		auto part = ep.partitioned;
		at(now_ + lat, [this, to, to_link, frame, part] {
			if (*part) {
				dropped_++;
				return;
			}
			FrameReader r;
			r.feed(*frame);
			auto msg = r.next();
			delivered_++;
			if (nodes_.at(to).handler)
				nodes_.at(to).handler(to_link, *msg);
		});
	}
}

void SimNetwork::at(std::int64_t t, std::function<void()> fn)
{
	queue_.push(Timed{std::max(t, now_), order_++, std::move(fn)});
}

bool SimNetwork::step()
{
	if (queue_.empty())
		return false;
	auto ev = queue_.top();
	queue_.pop();
	now_ = ev.t;
	ev.fn();
	return true;
}

void SimNetwork::run_until(std::int64_t t)
{
	while (!queue_.empty() && queue_.top().t <= t)
		step();
	now_ = std::max(now_, t);
}

std::optional<std::int64_t> SimNetwork::next_event_time() const
{
	if (queue_.empty())
		return std::nullopt;
	return queue_.top().t;
}

// ---------------------------------------------------------------------------

SimHost::SimHost(SimNetwork &net, NodeId node, Agent &agent) : net_(net), node_(node), agent_(agent)
{
	net_.set_handler(node_, [this](LinkId link, const Message &m) { handle(agent_.on_message(link, m, local_now())); });
}

void SimHost::connect(LinkId link) { handle(agent_.on_connect(link, local_now())); }

void SimHost::send_all(const std::vector<Outgoing> &out)
{
	for (const auto &o : out)
		net_.send(node_, o.link, o.msg);
	reschedule();
}

void SimHost::handle(std::vector<Outgoing> out)
{
	for (auto &e : agent_.take_events())
		events_.push_back(std::move(e));
	send_all(out);
}

void SimHost::reschedule()
{
	auto w = agent_.next_wakeup();
	if (!w)
		return;
	const auto gen = ++generation_;
	const auto global = *w - net_.clock(node_).offset_ns();
	net_.at(global, [this, gen] {
		if (gen != generation_)
			return;
		handle(agent_.poll(local_now()));
	});
}

// ---------------------------------------------------------------------------

SimChannel::SimChannel(SimNetwork &net, NodeId node, LinkId link) : net_(net), node_(node), link_(link)
{
	net_.set_handler(node_, [this](LinkId l, const Message &m) {
		if (l == link_)
			inbox_.push_back(m);
	});
}

void SimChannel::send(const Message &m) { net_.send(node_, link_, m); }

std::optional<Message> SimChannel::receive_until(std::int64_t deadline_ns)
{
	const auto global_deadline = deadline_ns - net_.clock(node_).offset_ns();
	while (inbox_.empty()) {
		auto t = net_.next_event_time();
		if (!t || *t > global_deadline) {
			net_.run_until(global_deadline);
			break;
		}
		net_.step();
	}
	if (inbox_.empty())
		return std::nullopt;
	auto m = std::move(inbox_.front());
	inbox_.pop_front();
	return m;
}

void serve_time(SimNetwork &net, NodeId node)
{
	auto seq = std::make_shared<std::uint64_t>(0);
	net.set_handler(node, [&net, node, seq](LinkId link, const Message &m) {
		if (const auto *req = std::get_if<TimeReq>(&m.body)) {
			const auto now = net.clock(node).now_ns();
			net.send(node, link, Message{(*seq)++, m.session_id, TimeResp{req->t1, now, now}});
		}
	});
}

} // namespace cusco::coord::sim
