#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cusco/common.hpp"
#include "cusco/session.hpp"

// Leader/follower coordination between recording devices.
//
// Wire frame (big-endian):
//
//   length      u32   bytes that follow (type + msg_seq + payload)
//   type        u8    MsgType
//   msg_seq     u64   strictly increasing per sender
//   payload           16-byte session_id, then the type-specific fields below
//
//   HELLO        u8 version, 16 peer_id, u8 role, u16 len + device_id
//   TIME_REQ     i64 t1
//   TIME_RESP    i64 t1, i64 t2, i64 t3
//   SCHEDULE     u8 action, u8 actor, i64 execute_at (leader clock)
//   ACK          u64 acked_seq, u8 accepted, u16 len + detail
//   HEARTBEAT    u8 state, i64 offset_ns, i64 uncertainty_ns, i64 sync_age_ns (-1: never)
//   STATUS_REQ   (nothing)
//   STATUS_RESP  u8 state, u64 chunks_written
//   BYE          (nothing)
namespace cusco::coord {

inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 64 * 1024;

enum class MsgType : std::uint8_t {
	hello = 1,
	time_req = 2,
	time_resp = 3,
	schedule = 4,
	ack = 5,
	heartbeat = 6,
	status_req = 7,
	status_resp = 8,
	bye = 9,
};

enum class Role : std::uint8_t { leader = 1, follower = 2 };

std::string_view to_string(MsgType t);
std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

struct Hello {
	std::uint8_t version = kProtocolVersion;
	Uuid peer_id;
	Role role = Role::follower;
	std::string device_id;
	friend bool operator==(const Hello &, const Hello &) = default;
};
struct TimeReq {
	std::int64_t t1 = 0;
	friend bool operator==(const TimeReq &, const TimeReq &) = default;
};
struct TimeResp {
	std::int64_t t1 = 0, t2 = 0, t3 = 0;
	friend bool operator==(const TimeResp &, const TimeResp &) = default;
};
struct Schedule {
	session::Action action = session::Action::start;
	session::Actor actor = session::Actor::researcher;
	std::int64_t execute_at_leader_ns = 0;
	friend bool operator==(const Schedule &, const Schedule &) = default;
};
struct Ack {
	std::uint64_t acked_seq = 0;
	bool accepted = true;
	std::string detail;
	friend bool operator==(const Ack &, const Ack &) = default;
};
struct Heartbeat {
	session::SessionState state = session::SessionState::Idle;
	std::int64_t offset_ns = 0;
	std::int64_t uncertainty_ns = 0;
	std::int64_t sync_age_ns = -1;
	friend bool operator==(const Heartbeat &, const Heartbeat &) = default;
};
struct StatusReq {
	friend bool operator==(const StatusReq &, const StatusReq &) = default;
};
struct StatusResp {
	session::SessionState state = session::SessionState::Idle;
	std::uint64_t chunks_written = 0;
	friend bool operator==(const StatusResp &, const StatusResp &) = default;
};
struct Bye {
	friend bool operator==(const Bye &, const Bye &) = default;
};

using Payload = std::variant<Hello, TimeReq, TimeResp, Schedule, Ack, Heartbeat, StatusReq, StatusResp, Bye>;

struct Message {
	std::uint64_t seq = 0;
	Uuid session_id;
	Payload body;

	MsgType type() const;
	friend bool operator==(const Message &, const Message &) = default;
};

// Whole frame including the length prefix.
Bytes encode(const Message &m);
// Frame body without the length prefix. Throws ProtocolError.
Message decode_body(ByteView body);

// Reassembles frames from a byte stream.
class FrameReader {
public:
	void feed(ByteView data);
	// Throws ProtocolError on an oversize or malformed frame.
	std::optional<Message> next();

private:
	Bytes buf_;
};

// ---------------------------------------------------------------------------
// Clock offset estimation: four-timestamp exchange, best of n by RTT.

struct ClockSample {
	std::int64_t t1 = 0, t2 = 0, t3 = 0, t4 = 0;

	// Estimated (responder clock - requester clock), rounded toward -inf.
	std::int64_t offset() const;
	std::int64_t rtt() const { return (t4 - t1) - (t3 - t2); }
};

struct ClockEstimate {
	std::int64_t offset_ns = 0;
	std::int64_t uncertainty_ns = 0;
	std::int64_t rtt_ns = 0;
	std::size_t best_round = 0;
	std::size_t rounds_used = 0;
};

class SyncError : public Error {
public:
	using Error::Error;
};

// Offset of the minimum-RTT sample; ties keep the earliest. Samples with a
// negative RTT are discarded. Throws SyncError if none remain.
ClockEstimate best_of(const std::vector<ClockSample> &samples);

// Blocking request/response transport, used by sync_clocks.
class Channel {
public:
	virtual ~Channel() = default;
	virtual void send(const Message &m) = 0;
	// Next message, or nullopt once the local clock reaches `deadline_ns`.
	virtual std::optional<Message> receive_until(std::int64_t deadline_ns) = 0;
};

// Runs `rounds` TIME_REQ/TIME_RESP exchanges over `link` and returns the
// estimate from the minimum-RTT round. Throws SyncError if no round completes
// within `timeout_ns` each.
ClockEstimate sync_clocks(Channel &link, const Clock &local, int rounds, std::int64_t timeout_ns,
                          const Uuid &session_id, std::uint64_t &next_seq);

// ---------------------------------------------------------------------------
// Heartbeats.

// A peer is lost when nothing was heard for more than threshold x interval.
class HeartbeatMonitor {
public:
	HeartbeatMonitor(std::int64_t interval_ns, std::uint32_t loss_threshold);

	// Returns true if this revives a peer previously reported lost.
	bool heard(const std::string &peer, std::int64_t now);
	// Peers newly lost at `now`, each reported once per outage.
	std::vector<std::string> check(std::int64_t now);
	bool lost(const std::string &peer) const;
	void forget(const std::string &peer);
	std::optional<std::int64_t> next_deadline() const;
	std::int64_t interval_ns() const { return interval_; }

private:
	struct Entry {
		std::int64_t last = 0;
		bool lost = false;
	};
	std::int64_t interval_;
	std::uint32_t threshold_;
	std::map<std::string, Entry> peers_;
};

// ---------------------------------------------------------------------------
// Agents: transport-free state machines. Inputs are messages and the local
// time; outputs are messages to send and events to log.

using LinkId = std::uint32_t;

struct Outgoing {
	LinkId link = 0;
	Message msg;
};

struct CoordConfig {
	std::int64_t heartbeat_interval_ns = 500 * kNsPerMs;
	std::uint32_t loss_threshold = 3;
	std::int64_t max_sync_age_ns = 30 * kNsPerSec;
	std::int64_t resync_interval_ns = 10 * kNsPerSec;
	int sync_rounds = 5;
	std::int64_t sync_timeout_ns = kNsPerSec;
	// ACKs must arrive this long before the execution instant.
	std::int64_t ack_margin_ns = 50 * kNsPerMs;
	std::int64_t retransmit_ns = 200 * kNsPerMs;
	std::string device_id;

	void validate() const;
};

struct CoordEvent {
	// peer_lost, peer_recovered, state_divergence, unconfirmed, executed,
	// late_execution, schedule_rejected, synced
	std::string kind;
	std::string peer;
	nlohmann::json detail = nlohmann::json::object();
	std::int64_t at_ns = 0;
};

using Executor = std::function<void(session::Action, session::Actor, std::int64_t at_local_ns)>;
using StateProvider = std::function<session::SessionState()>;
using ChunkCounter = std::function<std::uint64_t()>;

struct PeerInfo {
	Uuid peer_id;
	Role role = Role::follower;
	LinkId link = 0;
	std::string device_id;
	std::optional<std::int64_t> last_heartbeat_at;
	std::int64_t clock_offset_ns = 0;
	std::int64_t offset_uncertainty_ns = 0;
	std::optional<std::int64_t> synced_at;
	session::SessionState state = session::SessionState::Idle;
	bool lost = false;
	bool departed = false;
};

class Agent {
public:
	virtual ~Agent() = default;
	virtual std::vector<Outgoing> on_connect(LinkId link, std::int64_t now) = 0;
	virtual std::vector<Outgoing> on_message(LinkId link, const Message &m, std::int64_t now) = 0;
	virtual std::vector<Outgoing> poll(std::int64_t now) = 0;
	virtual std::optional<std::int64_t> next_wakeup() const = 0;
	virtual std::vector<CoordEvent> take_events() = 0;
};

class StalePeersError : public PreconditionError {
public:
	StalePeersError(std::vector<std::string> peers);
	const std::vector<std::string> &peers() const { return peers_; }

private:
	std::vector<std::string> peers_;
};

struct ScheduleOutcome {
	std::uint64_t msg_seq = 0;
	std::int64_t execute_at_leader_ns = 0;
	std::vector<Outgoing> messages;
};

class LeaderAgent final : public Agent {
public:
	LeaderAgent(Uuid self, CoordConfig config, Executor exec, StateProvider state);

	std::vector<Outgoing> on_connect(LinkId link, std::int64_t now) override;
	std::vector<Outgoing> on_message(LinkId link, const Message &m, std::int64_t now) override;
	std::vector<Outgoing> poll(std::int64_t now) override;
	std::optional<std::int64_t> next_wakeup() const override;
	std::vector<CoordEvent> take_events() override;

	// Sends SCHEDULE to every follower and queues the local execution at
	// now + lead. start/resume are refused if any follower's sync is older
	// than max_sync_age; pause/stop always go out.
	ScheduleOutcome schedule(session::Action action, session::Actor actor, std::int64_t lead_ns,
	                         std::int64_t now);

	void set_session(const Uuid &id) { session_id_ = id; }
	std::vector<PeerInfo> peers() const;
	// Peers that were sent a schedule and had not acknowledged it in time.
	std::set<std::string> unconfirmed(std::uint64_t msg_seq) const;

private:
	struct Pending {
		Schedule sched;
		std::map<LinkId, bool> acked;
		std::int64_t last_sent = 0;
		bool executed = false;
		bool deadline_checked = false;
		std::set<std::string> unconfirmed;
	};
	Message make(Payload body);
	std::string peer_name(LinkId link) const;

	Uuid self_;
	CoordConfig config_;
	Executor exec_;
	StateProvider state_;
	Uuid session_id_;
	std::uint64_t seq_ = 0;
	std::map<LinkId, PeerInfo> peers_;
	std::map<std::uint64_t, Pending> pending_;
	HeartbeatMonitor monitor_;
	std::int64_t next_heartbeat_ = 0;
	std::vector<CoordEvent> events_;
};

class FollowerAgent final : public Agent {
public:
	FollowerAgent(Uuid self, CoordConfig config, Executor exec, StateProvider state,
	              ChunkCounter chunks = {});

	std::vector<Outgoing> on_connect(LinkId link, std::int64_t now) override;
	std::vector<Outgoing> on_message(LinkId link, const Message &m, std::int64_t now) override;
	std::vector<Outgoing> poll(std::int64_t now) override;
	std::optional<std::int64_t> next_wakeup() const override;
	std::vector<CoordEvent> take_events() override;

	std::optional<ClockEstimate> estimate() const { return estimate_; }
	std::optional<std::int64_t> synced_at() const { return synced_at_; }
	// Overrides the measured offset; used by tests that inject estimate error.
	void set_estimate(const ClockEstimate &e, std::int64_t now);
	bool leader_lost() const { return monitor_.lost("leader"); }
	std::uint64_t executed_count() const { return executed_; }

private:
	struct Planned {
		std::uint64_t seq;
		Schedule sched;
		std::int64_t due_local;
	};
	Message make(Payload body);
	std::vector<Outgoing> send_time_req(std::int64_t now);

	Uuid self_;
	CoordConfig config_;
	Executor exec_;
	StateProvider state_;
	ChunkCounter chunks_;
	Uuid session_id_;
	std::uint64_t seq_ = 0;
	std::optional<LinkId> leader_link_;
	std::optional<std::uint64_t> highest_schedule_;
	std::vector<Planned> planned_;
	std::uint64_t executed_ = 0;
	HeartbeatMonitor monitor_;
	std::int64_t next_heartbeat_ = 0;
	std::optional<ClockEstimate> estimate_;
	std::optional<std::int64_t> synced_at_;
	std::vector<ClockSample> samples_;
	std::optional<std::int64_t> outstanding_t1_;
	std::int64_t sync_started_ = 0;
	std::vector<CoordEvent> events_;
};

} // namespace cusco::coord
