#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "cusco/container.hpp"
#include "cusco/recorder.hpp"
#include "cusco/streams.hpp"

namespace cusco::session {

enum class SessionState { Idle, ConsentPending, Ready, Recording, Paused, Stopped };
enum class Actor { researcher, witness, system };
enum class Action {
	consent_participant,
	consent_witness,
	start,
	pause,
	resume,
	stop,
	stream_gap,
	peer_lost,
	peer_recovered,
	state_divergence,
};

std::string_view to_string(SessionState s);
std::string_view to_string(Actor a);
std::string_view to_string(Action a);
SessionState session_state_from_string(std::string_view s);
Actor actor_from_string(std::string_view s);
Action action_from_string(std::string_view s);

struct ParticipantConsent {
	std::string participant_code;
	std::string pis_version;
	std::int64_t participant_consent_at_ns = 0;
};

struct WitnessConsent {
	std::string witness_code;
	std::int64_t witness_consent_at_ns = 0;
	bool understood_pis = false;
	bool questions_answered = false;
	bool no_deception = false;
};

struct ConsentRecord {
	std::optional<ParticipantConsent> participant;
	std::optional<WitnessConsent> witness;

	bool complete() const { return participant && witness; }
};

struct SessionEvent {
	std::uint64_t index = 0;
	std::int64_t at_ns = 0; // UTC
	Actor actor = Actor::system;
	Action action = Action::start;
	std::optional<std::string> reason;
	nlohmann::json detail = nlohmann::json::object();

	friend bool operator==(const SessionEvent &, const SessionEvent &) = default;
};

// One compact JSON object, keys sorted, no trailing newline.
std::string to_canonical_json(const SessionEvent &e);
SessionEvent event_from_json(const nlohmann::json &j);

// Rejected transition. `code` is machine-readable (consent_incomplete,
// consent_order, attestation_missing, sources_absent, illegal_transition,
// invalid_consent); `detail` carries the specifics, e.g. {"missing":"witness"}.
class TransitionError : public PreconditionError {
public:
	TransitionError(std::string code, const std::string &message, nlohmann::json detail = nlohmann::json::object())
	    : PreconditionError(message), code_(std::move(code)), detail_(std::move(detail))
	{
	}
	const std::string &code() const { return code_; }
	const nlohmann::json &detail() const { return detail_; }

private:
	std::string code_;
	nlohmann::json detail_;
};

struct SessionConfig {
	Uuid project_id;
	crypto::PublicKey recipient{};
	std::filesystem::path output_dir;
	// A meta stream is appended when the table has none.
	std::vector<StreamDescriptor> streams;
	container::WriterOptions writer;
	bool realtime = false;
	std::uint64_t seed = 0;
	streams::SourceFactory factory;
};

struct StopResult {
	bool already_stopped = false;
};

struct SessionSnapshot {
	Uuid session_id;
	SessionState state = SessionState::Idle;
	bool participant_consented = false;
	bool witness_consented = false;
	std::optional<std::filesystem::path> container_path;
	std::uint64_t chunks_written = 0;
	std::uint64_t bytes_written = 0;
	std::uint64_t event_count = 0;
	std::vector<streams::StreamCounters> streams;
};

// The single owner of a session. Every transition takes the controller lock,
// so concurrent requests from the API, CLI and peer links apply one at a time
// in arrival order.
class SessionController {
public:
	// `mono` stamps media and chunk times; `utc` stamps the event log.
	SessionController(SessionConfig config, const Clock &mono, const Clock &utc);
	~SessionController();

	void consent_participant(const ParticipantConsent &c, Actor actor = Actor::researcher);
	void consent_witness(const WitnessConsent &c, Actor actor = Actor::witness);

	// Creates the container. Absent sources refuse the start unless their ids
	// are listed in `overrides`.
	void start(Actor actor, std::optional<std::string> reason = {},
	           const std::set<std::uint32_t> &overrides = {});
	void pause(Actor actor, std::optional<std::string> reason = {});
	void resume(Actor actor, std::optional<std::string> reason = {});
	StopResult stop(Actor actor, std::optional<std::string> reason = {});

	// Throws what start/pause/resume/stop would throw in the current state,
	// without side effects. Source presence is only checked by start itself.
	void check(Action action) const;

	// System events (stream_gap, peer_lost, ...). Ignored once Stopped;
	// returns whether the event was logged.
	bool log_system(Action action, nlohmann::json detail = nlohmann::json::object());

	// Stepped capture up to the clock's current time; in realtime mode only
	// collects recorder events into the log.
	void pump();

	SessionState state() const;
	Uuid session_id() const { return session_id_; }
	const std::vector<StreamDescriptor> &streams() const { return config_.streams; }
	std::vector<SessionEvent> events() const;
	ConsentRecord consent() const;
	SessionSnapshot snapshot() const;
	std::optional<std::filesystem::path> container_path() const;
	std::vector<streams::SourceStatus> probe() const;

private:
	SessionEvent &log_locked(Actor actor, Action action, std::optional<std::string> reason,
	                         nlohmann::json detail = nlohmann::json::object());
	void write_meta_locked(std::size_t from);
	void collect_recorder_events_locked();
	void advance_locked(std::int64_t now);
	void check_locked(Action action) const;
	[[noreturn]] void illegal(std::string_view action) const;

	SessionConfig config_;
	const Clock &mono_;
	const Clock &utc_;
	Uuid session_id_;
	mutable std::mutex mutex_;
	SessionState state_ = SessionState::Idle;
	ConsentRecord consent_;
	std::vector<SessionEvent> events_;
	std::size_t events_written_ = 0;
	std::unique_ptr<streams::Recorder> recorder_;
	std::optional<std::filesystem::path> path_;
	std::uint64_t final_chunks_ = 0;
	std::uint64_t final_bytes_ = 0;
	std::vector<streams::StreamCounters> final_counters_;
};

// Final state implied by an event log, checking that every step is legal and
// that indices run 0, 1, 2, ... without gaps.
SessionState replay(const std::vector<SessionEvent> &events);

// Event log decoded from a container's meta stream.
std::vector<SessionEvent> read_event_log(const std::filesystem::path &container,
                                         const crypto::SecretKey &priv);

// Session events from the meta stream payloads of already-decoded chunks.
std::vector<SessionEvent> parse_meta_payload(ByteView payload);

} // namespace cusco::session
