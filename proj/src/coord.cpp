#include "cusco/coord.hpp"

#include <algorithm>
#include <limits>

namespace cusco::coord {

using session::Action;
using session::SessionState;

std::string_view to_string(MsgType t)
{
	switch (t) {
	case MsgType::hello:
		return "HELLO";
	case MsgType::time_req:
		return "TIME_REQ";
	case MsgType::time_resp:
		return "TIME_RESP";
	case MsgType::schedule:
		return "SCHEDULE";
	case MsgType::ack:
		return "ACK";
	case MsgType::heartbeat:
		return "HEARTBEAT";
	case MsgType::status_req:
		return "STATUS_REQ";
	case MsgType::status_resp:
		return "STATUS_RESP";
	case MsgType::bye:
		return "BYE";
	}
	return "UNKNOWN";
}

std::string_view to_string(Role r) { return r == Role::leader ? "leader" : "follower"; }

Role role_from_string(std::string_view s)
{
	if (s == "leader")
		return Role::leader;
	if (s == "follower")
		return Role::follower;
	throw ConfigError("role must be 'leader' or 'follower'");
}

MsgType Message::type() const { return static_cast<MsgType>(body.index() + 1); }

namespace {

void put_string(Bytes &out, const std::string &s)
{
	if (s.size() > 0xFFFF)
		throw ProtocolError("string field too long");
	be::put_u16(out, static_cast<std::uint16_t>(s.size()));
	be::put_bytes(out, ByteView(reinterpret_cast<const std::uint8_t *>(s.data()), s.size()));
}

std::string get_string(be::Reader &r) { return r.string(r.u16()); }

void put_uuid(Bytes &out, const Uuid &u) { be::put_bytes(out, u.bytes); }

Uuid get_uuid(be::Reader &r)
{
	Uuid u;
	auto b = r.bytes(16);
	std::copy(b.begin(), b.end(), u.bytes.begin());
	return u;
}

SessionState get_state(be::Reader &r)
{
	auto v = r.u8();
	if (v > static_cast<std::uint8_t>(SessionState::Stopped))
		throw ProtocolError("bad session state " + std::to_string(v));
	return static_cast<SessionState>(v);
}

Action get_action(be::Reader &r)
{
	auto v = r.u8();
	auto a = static_cast<Action>(v);
	if (a != Action::start && a != Action::pause && a != Action::resume && a != Action::stop)
		throw ProtocolError("SCHEDULE carries a non-schedulable action " + std::to_string(v));
	return a;
}

session::Actor get_actor(be::Reader &r)
{
	auto v = r.u8();
	if (v > static_cast<std::uint8_t>(session::Actor::system))
		throw ProtocolError("bad actor " + std::to_string(v));
	return static_cast<session::Actor>(v);
}

std::int64_t floor_half(std::int64_t x) { return x >= 0 ? x / 2 : -((-x + 1) / 2); }

} // namespace

Bytes encode(const Message &m)
{
	Bytes body;
	be::put_u8(body, static_cast<std::uint8_t>(m.type()));
	be::put_u64(body, m.seq);
	put_uuid(body, m.session_id);
	std::visit(
	    [&](const auto &p) {
		    using T = std::decay_t<decltype(p)>;
		    if constexpr (std::is_same_v<T, Hello>) {
			    be::put_u8(body, p.version);
			    put_uuid(body, p.peer_id);
			    be::put_u8(body, static_cast<std::uint8_t>(p.role));
			    put_string(body, p.device_id);
		    } else if constexpr (std::is_same_v<T, TimeReq>) {
			    be::put_i64(body, p.t1);
		    } else if constexpr (std::is_same_v<T, TimeResp>) {
			    be::put_i64(body, p.t1);
			    be::put_i64(body, p.t2);
			    be::put_i64(body, p.t3);
		    } else if constexpr (std::is_same_v<T, Schedule>) {
			    be::put_u8(body, static_cast<std::uint8_t>(p.action));
			    be::put_u8(body, static_cast<std::uint8_t>(p.actor));
			    be::put_i64(body, p.execute_at_leader_ns);
		    } else if constexpr (std::is_same_v<T, Ack>) {
			    be::put_u64(body, p.acked_seq);
			    be::put_u8(body, p.accepted ? 1 : 0);
			    put_string(body, p.detail);
		    } else if constexpr (std::is_same_v<T, Heartbeat>) {
			    be::put_u8(body, static_cast<std::uint8_t>(p.state));
			    be::put_i64(body, p.offset_ns);
			    be::put_i64(body, p.uncertainty_ns);
			    be::put_i64(body, p.sync_age_ns);
		    } else if constexpr (std::is_same_v<T, StatusResp>) {
			    be::put_u8(body, static_cast<std::uint8_t>(p.state));
			    be::put_u64(body, p.chunks_written);
		    }
	    },
	    m.body);
	Bytes out;
	be::put_u32(out, static_cast<std::uint32_t>(body.size()));
	be::put_bytes(out, body);
	return out;
}

Message decode_body(ByteView data)
{
	try {
		be::Reader r(data);
		const auto type = r.u8();
		Message m;
		m.seq = r.u64();
		m.session_id = get_uuid(r);
		switch (static_cast<MsgType>(type)) {
		case MsgType::hello: {
			Hello h;
			h.version = r.u8();
			if (h.version != kProtocolVersion)
				throw ProtocolError("unsupported protocol version " + std::to_string(h.version));
			h.peer_id = get_uuid(r);
			auto role = r.u8();
			if (role != 1 && role != 2)
				throw ProtocolError("bad role " + std::to_string(role));
			h.role = static_cast<Role>(role);
			h.device_id = get_string(r);
			m.body = h;
			break;
		}
		case MsgType::time_req:
			m.body = TimeReq{r.i64()};
			break;
		case MsgType::time_resp: {
			TimeResp t;
			t.t1 = r.i64();
			t.t2 = r.i64();
			t.t3 = r.i64();
			m.body = t;
			break;
		}
		case MsgType::schedule: {
			Schedule s;
			s.action = get_action(r);
			s.actor = get_actor(r);
			s.execute_at_leader_ns = r.i64();
			m.body = s;
			break;
		}
		case MsgType::ack: {
			Ack a;
			a.acked_seq = r.u64();
			a.accepted = r.u8() != 0;
			a.detail = get_string(r);
			m.body = a;
			break;
		}
		case MsgType::heartbeat: {
			Heartbeat h;
			h.state = get_state(r);
			h.offset_ns = r.i64();
			h.uncertainty_ns = r.i64();
			h.sync_age_ns = r.i64();
			m.body = h;
			break;
		}
		case MsgType::status_req:
			m.body = StatusReq{};
			break;
		case MsgType::status_resp: {
			StatusResp s;
			s.state = get_state(r);
			s.chunks_written = r.u64();
			m.body = s;
			break;
		}
		case MsgType::bye:
			m.body = Bye{};
			break;
		default:
			throw ProtocolError("unknown message type " + std::to_string(type));
		}
		if (!r.empty())
			throw ProtocolError("trailing bytes in " + std::string(to_string(m.type())));
		return m;
	} catch (const FormatError &e) {
		throw ProtocolError(std::string("truncated message: ") + e.what());
	}
}

void FrameReader::feed(ByteView data) { buf_.insert(buf_.end(), data.begin(), data.end()); }

std::optional<Message> FrameReader::next()
{
	if (buf_.size() < 4)
		return std::nullopt;
	const auto len = be::load_u32(buf_.data());
	if (len > kMaxFrameBytes)
		throw ProtocolError("frame of " + std::to_string(len) + " bytes exceeds limit");
	if (buf_.size() < 4 + static_cast<std::size_t>(len))
		return std::nullopt;
	auto m = decode_body(ByteView(buf_.data() + 4, len));
	buf_.erase(buf_.begin(), buf_.begin() + 4 + len);
	return m;
}

std::int64_t ClockSample::offset() const { return floor_half((t2 - t1) + (t3 - t4)); }

ClockEstimate best_of(const std::vector<ClockSample> &samples)
{
	std::optional<std::size_t> best;
	std::size_t used = 0;
	for (std::size_t i = 0; i < samples.size(); ++i) {
		if (samples[i].rtt() < 0)
			continue;
		used++;
		if (!best || samples[i].rtt() < samples[*best].rtt())
			best = i;
	}
	if (!best)
		throw SyncError("no usable clock sync round");
	const auto &s = samples[*best];
	return ClockEstimate{s.offset(), floor_half(s.rtt()), s.rtt(), *best, used};
}

ClockEstimate sync_clocks(Channel &link, const Clock &local, int rounds, std::int64_t timeout_ns,
                          const Uuid &session_id, std::uint64_t &next_seq)
{
	if (rounds < 1)
		throw PreconditionError("sync_clocks: rounds must be >= 1");
	std::vector<ClockSample> samples;
	for (int i = 0; i < rounds; ++i) {
		const auto t1 = local.now_ns();
		link.send(Message{next_seq++, session_id, TimeReq{t1}});
		const auto deadline = t1 + timeout_ns;
		while (true) {
			auto m = link.receive_until(deadline);
			if (!m)
				break;
			const auto *resp = std::get_if<TimeResp>(&m->body);
			if (!resp || resp->t1 != t1)
				continue;
			samples.push_back({t1, resp->t2, resp->t3, local.now_ns()});
			break;
		}
	}
	if (samples.empty())
		throw SyncError("clock sync: no response within " + std::to_string(timeout_ns / kNsPerMs) + " ms");
	auto e = best_of(samples);
	e.rounds_used = samples.size();
	return e;
}

HeartbeatMonitor::HeartbeatMonitor(std::int64_t interval_ns, std::uint32_t loss_threshold)
    : interval_(interval_ns), threshold_(loss_threshold)
{
	if (interval_ns < 100 * kNsPerMs)
		throw ConfigError("heartbeat interval must be at least 100 ms");
	if (loss_threshold < 1)
		throw ConfigError("heartbeat loss threshold must be at least 1");
}

bool HeartbeatMonitor::heard(const std::string &peer, std::int64_t now)
{
	auto &e = peers_[peer];
	const bool revived = e.lost;
	e.last = std::max(e.last, now);
	e.lost = false;
	return revived;
}

std::vector<std::string> HeartbeatMonitor::check(std::int64_t now)
{
	std::vector<std::string> out;
	for (auto &[name, e] : peers_) {
		if (!e.lost && now - e.last > static_cast<std::int64_t>(threshold_) * interval_) {
			e.lost = true;
			out.push_back(name);
		}
	}
	return out;
}

bool HeartbeatMonitor::lost(const std::string &peer) const
{
	auto it = peers_.find(peer);
	return it != peers_.end() && it->second.lost;
}

void HeartbeatMonitor::forget(const std::string &peer) { peers_.erase(peer); }

std::optional<std::int64_t> HeartbeatMonitor::next_deadline() const
{
	std::optional<std::int64_t> out;
	for (const auto &[name, e] : peers_) {
		if (e.lost)
			continue;
		auto d = e.last + static_cast<std::int64_t>(threshold_) * interval_ + 1;
		if (!out || d < *out)
			out = d;
	}
	return out;
}

void CoordConfig::validate() const
{
	if (heartbeat_interval_ns < 100 * kNsPerMs)
		throw ConfigError("coord.heartbeat_interval_ms must be at least 100");
	if (loss_threshold < 1)
		throw ConfigError("coord.loss_threshold must be at least 1");
	if (sync_rounds < 1)
		throw ConfigError("coord.sync_rounds must be at least 1");
}

StalePeersError::StalePeersError(std::vector<std::string> peers)
    : PreconditionError([&] {
	      std::string s = "schedule refused, clock sync stale for:";
	      for (const auto &p : peers)
		      s += " " + p;
	      return s;
      }()),
      peers_(std::move(peers))
{
}

namespace {

bool needs_fresh_sync(Action a) { return a == Action::start || a == Action::resume; }

void min_into(std::optional<std::int64_t> &acc, std::int64_t v)
{
	if (!acc || v < *acc)
		acc = v;
}

} // namespace

// ---------------------------------------------------------------------------

LeaderAgent::LeaderAgent(Uuid self, CoordConfig config, Executor exec, StateProvider state)
    : self_(self), config_(std::move(config)), exec_(std::move(exec)), state_(std::move(state)),
      monitor_(config_.heartbeat_interval_ns, config_.loss_threshold)
{
	config_.validate();
}

Message LeaderAgent::make(Payload body) { return Message{seq_++, session_id_, std::move(body)}; }

std::string LeaderAgent::peer_name(LinkId link) const
{
	auto it = peers_.find(link);
	if (it != peers_.end() && !it->second.device_id.empty())
		return it->second.device_id;
	if (it != peers_.end() && !it->second.peer_id.is_nil())
		return it->second.peer_id.str();
	return "link" + std::to_string(link);
}

std::vector<Outgoing> LeaderAgent::on_connect(LinkId link, std::int64_t now)
{
	auto &p = peers_[link];
	p.link = link;
	p.departed = false;
	monitor_.heard("link" + std::to_string(link), now);
	return {{link, make(Hello{kProtocolVersion, self_, Role::leader, config_.device_id})}};
}

std::vector<Outgoing> LeaderAgent::on_message(LinkId link, const Message &m, std::int64_t now)
{
	std::vector<Outgoing> out;
	auto &peer = peers_[link];
	peer.link = link;
	if (peer.departed)
		return out;
	const auto key = "link" + std::to_string(link);
	if (monitor_.heard(key, now)) {
		peer.lost = false;
		events_.push_back({"peer_recovered", peer_name(link), {}, now});
		// Compare states after the outage; divergence is reported, not resolved.
		out.push_back({link, make(StatusReq{})});
	}

	std::visit(
	    [&](const auto &p) {
		    using T = std::decay_t<decltype(p)>;
		    if constexpr (std::is_same_v<T, Hello>) {
			    peer.peer_id = p.peer_id;
			    peer.role = p.role;
			    peer.device_id = p.device_id;
		    } else if constexpr (std::is_same_v<T, TimeReq>) {
			    out.push_back({link, make(TimeResp{p.t1, now, now})});
		    } else if constexpr (std::is_same_v<T, Heartbeat>) {
			    peer.last_heartbeat_at = now;
			    peer.clock_offset_ns = p.offset_ns;
			    peer.offset_uncertainty_ns = p.uncertainty_ns;
			    peer.state = p.state;
			    if (p.sync_age_ns >= 0)
				    peer.synced_at = now - p.sync_age_ns;
			    else
				    peer.synced_at.reset();
		    } else if constexpr (std::is_same_v<T, Ack>) {
			    auto it = pending_.find(p.acked_seq);
			    if (it == pending_.end() || !it->second.acked.count(link))
				    return;
			    if (!it->second.acked[link]) {
				    it->second.acked[link] = true;
				    if (!p.accepted)
					    events_.push_back({"schedule_rejected",
					                       peer_name(link),
					                       {{"msg_seq", p.acked_seq}, {"detail", p.detail}},
					                       now});
			    }
		    } else if constexpr (std::is_same_v<T, StatusResp>) {
			    peer.state = p.state;
			    const auto mine = state_ ? state_() : SessionState::Idle;
			    if (mine != p.state)
				    events_.push_back({"state_divergence",
				                       peer_name(link),
				                       {{"leader", session::to_string(mine)},
				                        {"follower", session::to_string(p.state)},
				                        {"follower_chunks", p.chunks_written}},
				                       now});
		    } else if constexpr (std::is_same_v<T, Bye>) {
			    peer.departed = true;
			    monitor_.forget(key);
		    }
	    },
	    m.body);
	return out;
}

ScheduleOutcome LeaderAgent::schedule(Action action, session::Actor actor, std::int64_t lead_ns,
                                      std::int64_t now)
{
	if (action != Action::start && action != Action::pause && action != Action::resume &&
	    action != Action::stop)
		throw PreconditionError("only start, pause, resume and stop can be scheduled");
	if (lead_ns < 0)
		throw PreconditionError("lead time must not be negative");
	if (needs_fresh_sync(action)) {
		std::vector<std::string> stale;
		for (const auto &[link, p] : peers_) {
			if (p.departed)
				continue;
			if (!p.synced_at || now - *p.synced_at >= config_.max_sync_age_ns)
				stale.push_back(peer_name(link));
		}
		if (!stale.empty())
			throw StalePeersError(stale);
	}
	ScheduleOutcome r;
	r.execute_at_leader_ns = now + lead_ns;
	auto msg = make(Schedule{action, actor, r.execute_at_leader_ns});
	r.msg_seq = msg.seq;
	Pending pend;
	pend.sched = std::get<Schedule>(msg.body);
	pend.last_sent = now;
	for (const auto &[link, p] : peers_) {
		if (p.departed)
			continue;
		pend.acked[link] = false;
		r.messages.push_back({link, msg});
	}
	pending_[msg.seq] = std::move(pend);
	return r;
}

std::vector<Outgoing> LeaderAgent::poll(std::int64_t now)
{
	std::vector<Outgoing> out;
	if (now >= next_heartbeat_) {
		const auto mine = state_ ? state_() : SessionState::Idle;
		for (const auto &[link, p] : peers_)
			if (!p.departed)
				out.push_back({link, make(Heartbeat{mine, 0, 0, 0})});
		next_heartbeat_ = now + config_.heartbeat_interval_ns;
	}
	for (auto &[seq, pend] : pending_) {
		const auto at = pend.sched.execute_at_leader_ns;
		if (!pend.deadline_checked && now >= at - config_.ack_margin_ns) {
			pend.deadline_checked = true;
			for (const auto &[link, ok] : pend.acked) {
				if (ok)
					continue;
				pend.unconfirmed.insert(peer_name(link));
				events_.push_back({"unconfirmed", peer_name(link), {{"msg_seq", seq}}, now});
			}
		}
		if (!pend.executed && now >= at) {
			pend.executed = true;
			try {
				if (exec_)
					exec_(pend.sched.action, pend.sched.actor, now);
				events_.push_back({"executed", "", {{"msg_seq", seq}, {"action", session::to_string(pend.sched.action)}}, now});
			} catch (const Error &e) {
				events_.push_back({"execution_failed", "", {{"msg_seq", seq}, {"error", e.what()}}, now});
			}
		}
		// Keep retransmitting to silent peers for a while after execution so a
		// follower that reconnects still learns of the action.
		if (now - pend.last_sent >= config_.retransmit_ns && now < at + 5 * kNsPerSec) {
			bool sent = false;
			for (const auto &[link, ok] : pend.acked) {
				if (ok || peers_[link].departed)
					continue;
				out.push_back({link, Message{seq, session_id_, pend.sched}});
				sent = true;
			}
			if (sent)
				pend.last_sent = now;
		}
	}
	for (const auto &key : monitor_.check(now)) {
		const LinkId link = static_cast<LinkId>(std::stoul(key.substr(4)));
		peers_[link].lost = true;
		events_.push_back({"peer_lost", peer_name(link), {}, now});
	}
	return out;
}

std::optional<std::int64_t> LeaderAgent::next_wakeup() const
{
	std::optional<std::int64_t> w = next_heartbeat_;
	if (auto d = monitor_.next_deadline())
		min_into(w, *d);
	for (const auto &[seq, pend] : pending_) {
		const auto at = pend.sched.execute_at_leader_ns;
		if (!pend.executed)
			min_into(w, at);
		if (!pend.deadline_checked)
			min_into(w, at - config_.ack_margin_ns);
		const bool unacked = std::any_of(pend.acked.begin(), pend.acked.end(),
		                                 [&](const auto &kv) { return !kv.second && !peers_.at(kv.first).departed; });
		const auto resend = pend.last_sent + config_.retransmit_ns;
		if (unacked && resend < at + 5 * kNsPerSec)
			min_into(w, resend);
	}
	return w;
}

std::vector<CoordEvent> LeaderAgent::take_events() { return std::exchange(events_, {}); }

std::vector<PeerInfo> LeaderAgent::peers() const
{
	std::vector<PeerInfo> out;
	for (const auto &[link, p] : peers_)
		out.push_back(p);
	return out;
}

std::set<std::string> LeaderAgent::unconfirmed(std::uint64_t msg_seq) const
{
	auto it = pending_.find(msg_seq);
	return it == pending_.end() ? std::set<std::string>{} : it->second.unconfirmed;
}

// ---------------------------------------------------------------------------

FollowerAgent::FollowerAgent(Uuid self, CoordConfig config, Executor exec, StateProvider state,
                             ChunkCounter chunks)
    : self_(self), config_(std::move(config)), exec_(std::move(exec)), state_(std::move(state)),
      chunks_(std::move(chunks)), monitor_(config_.heartbeat_interval_ns, config_.loss_threshold)
{
	config_.validate();
}

Message FollowerAgent::make(Payload body) { return Message{seq_++, session_id_, std::move(body)}; }

std::vector<Outgoing> FollowerAgent::send_time_req(std::int64_t now)
{
	outstanding_t1_ = now;
	sync_started_ = now;
	return {{*leader_link_, make(TimeReq{now})}};
}

std::vector<Outgoing> FollowerAgent::on_connect(LinkId link, std::int64_t now)
{
	leader_link_ = link;
	monitor_.heard("leader", now);
	samples_.clear();
	std::vector<Outgoing> out = {{link, make(Hello{kProtocolVersion, self_, Role::follower, config_.device_id})}};
	auto req = send_time_req(now);
	out.insert(out.end(), req.begin(), req.end());
	return out;
}

std::vector<Outgoing> FollowerAgent::on_message(LinkId link, const Message &m, std::int64_t now)
{
	std::vector<Outgoing> out;
	if (!leader_link_)
		leader_link_ = link;
	if (monitor_.heard("leader", now))
		events_.push_back({"peer_recovered", "leader", {}, now});
	if (!m.session_id.is_nil())
		session_id_ = m.session_id;

	std::visit(
	    [&](const auto &p) {
		    using T = std::decay_t<decltype(p)>;
		    if constexpr (std::is_same_v<T, TimeResp>) {
			    if (!outstanding_t1_ || p.t1 != *outstanding_t1_)
				    return;
			    outstanding_t1_.reset();
			    samples_.push_back({p.t1, p.t2, p.t3, now});
			    if (static_cast<int>(samples_.size()) < config_.sync_rounds) {
				    auto req = send_time_req(now);
				    out.insert(out.end(), req.begin(), req.end());
				    return;
			    }
			    try {
				    estimate_ = best_of(samples_);
				    synced_at_ = now;
				    events_.push_back({"synced",
				                       "leader",
				                       {{"offset_ns", estimate_->offset_ns}, {"uncertainty_ns", estimate_->uncertainty_ns}},
				                       now});
			    } catch (const SyncError &) {
			    }
			    samples_.clear();
		    } else if constexpr (std::is_same_v<T, Schedule>) {
			    if (highest_schedule_ && m.seq <= *highest_schedule_) {
				    // Duplicate or overtaken by a newer schedule: acknowledge, never re-run.
				    out.push_back({link, make(Ack{m.seq, m.seq == *highest_schedule_, "duplicate"})});
				    return;
			    }
			    highest_schedule_ = m.seq;
			    std::int64_t due = now;
			    if (estimate_) {
				    due = p.execute_at_leader_ns - estimate_->offset_ns;
			    } else if (needs_fresh_sync(p.action)) {
				    out.push_back({link, make(Ack{m.seq, false, "unsynced"})});
				    return;
			    }
			    if (due < now)
				    events_.push_back({"late_execution", "leader", {{"msg_seq", m.seq}, {"late_ns", now - due}}, now});
			    planned_.push_back({m.seq, p, due});
			    out.push_back({link, make(Ack{m.seq, true, ""})});
		    } else if constexpr (std::is_same_v<T, StatusReq>) {
			    out.push_back({link, make(StatusResp{state_ ? state_() : SessionState::Idle,
			                                         chunks_ ? chunks_() : 0})});
		    } else if constexpr (std::is_same_v<T, TimeReq>) {
			    out.push_back({link, make(TimeResp{p.t1, now, now})});
		    } else if constexpr (std::is_same_v<T, Bye>) {
			    monitor_.forget("leader");
		    }
	    },
	    m.body);
	return out;
}

std::vector<Outgoing> FollowerAgent::poll(std::int64_t now)
{
	std::vector<Outgoing> out;
	std::stable_sort(planned_.begin(), planned_.end(),
	                 [](const Planned &a, const Planned &b) { return a.due_local < b.due_local; });
	while (!planned_.empty() && planned_.front().due_local <= now) {
		auto p = planned_.front();
		planned_.erase(planned_.begin());
		try {
			if (exec_)
				exec_(p.sched.action, p.sched.actor, now);
			executed_++;
			events_.push_back({"executed", "", {{"msg_seq", p.seq}, {"action", session::to_string(p.sched.action)}}, now});
		} catch (const Error &e) {
			events_.push_back({"execution_failed", "", {{"msg_seq", p.seq}, {"error", e.what()}}, now});
		}
	}
	if (!leader_link_)
		return out;

	if (now >= next_heartbeat_) {
		Heartbeat hb;
		hb.state = state_ ? state_() : SessionState::Idle;
		if (estimate_) {
			hb.offset_ns = estimate_->offset_ns;
			hb.uncertainty_ns = estimate_->uncertainty_ns;
			hb.sync_age_ns = now - *synced_at_;
		}
		out.push_back({*leader_link_, make(hb)});
		next_heartbeat_ = now + config_.heartbeat_interval_ns;
	}

	if (outstanding_t1_ && now - sync_started_ >= config_.sync_timeout_ns) {
		// Round lost; try again, at most one request in flight.
		outstanding_t1_.reset();
		auto req = send_time_req(now);
		out.insert(out.end(), req.begin(), req.end());
	} else if (!outstanding_t1_ && (!synced_at_ || now - *synced_at_ >= config_.resync_interval_ns)) {
		samples_.clear();
		auto req = send_time_req(now);
		out.insert(out.end(), req.begin(), req.end());
	}

	for (const auto &name : monitor_.check(now))
		events_.push_back({"peer_lost", name, {{"policy", "keep recording"}}, now});
	return out;
}

std::optional<std::int64_t> FollowerAgent::next_wakeup() const
{
	std::optional<std::int64_t> w;
	for (const auto &p : planned_)
		min_into(w, p.due_local);
	if (!leader_link_)
		return w;
	min_into(w, next_heartbeat_);
	if (auto d = monitor_.next_deadline())
		min_into(w, *d);
	if (outstanding_t1_)
		min_into(w, sync_started_ + config_.sync_timeout_ns);
	else if (synced_at_)
		min_into(w, *synced_at_ + config_.resync_interval_ns);
	return w;
}

std::vector<CoordEvent> FollowerAgent::take_events() { return std::exchange(events_, {}); }

void FollowerAgent::set_estimate(const ClockEstimate &e, std::int64_t now)
{
	estimate_ = e;
	synced_at_ = now;
	outstanding_t1_.reset();
	samples_.clear();
}

} // namespace cusco::coord
