#include "cusco/session.hpp"

#include <algorithm>
#include <array>

namespace cusco::session {

namespace {

constexpr std::array<std::string_view, 6> kStates = {"Idle",      "ConsentPending", "Ready",
                                                     "Recording", "Paused",         "Stopped"};
constexpr std::array<std::string_view, 3> kActors = {"researcher", "witness", "system"};
constexpr std::array<std::string_view, 10> kActions = {
    "consent_participant", "consent_witness", "start",         "pause",         "resume",
    "stop",                "stream_gap",      "peer_lost",     "peer_recovered", "state_divergence"};

template <typename E, std::size_t N>
E from_names(const std::array<std::string_view, N> &names, std::string_view s, const char *what)
{
	for (std::size_t i = 0; i < N; ++i)
		if (names[i] == s)
			return static_cast<E>(i);
	throw FormatError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

} // namespace

std::string_view to_string(SessionState s) { return kStates.at(static_cast<std::size_t>(s)); }
std::string_view to_string(Actor a) { return kActors.at(static_cast<std::size_t>(a)); }
std::string_view to_string(Action a) { return kActions.at(static_cast<std::size_t>(a)); }

SessionState session_state_from_string(std::string_view s)
{
	return from_names<SessionState>(kStates, s, "session state");
}
Actor actor_from_string(std::string_view s) { return from_names<Actor>(kActors, s, "actor"); }
Action action_from_string(std::string_view s) { return from_names<Action>(kActions, s, "action"); }

std::string to_canonical_json(const SessionEvent &e)
{
	nlohmann::json j = {{"index", e.index},
	                    {"at_ns", e.at_ns},
	                    {"actor", to_string(e.actor)},
	                    {"action", to_string(e.action)},
	                    {"detail", e.detail}};
	if (e.reason)
		j["reason"] = *e.reason;
	return j.dump();
}

SessionEvent event_from_json(const nlohmann::json &j)
{
	try {
		SessionEvent e;
		e.index = j.at("index").get<std::uint64_t>();
		e.at_ns = j.at("at_ns").get<std::int64_t>();
		e.actor = actor_from_string(j.at("actor").get<std::string>());
		e.action = action_from_string(j.at("action").get<std::string>());
		if (j.contains("reason"))
			e.reason = j.at("reason").get<std::string>();
		e.detail = j.value("detail", nlohmann::json::object());
		return e;
	} catch (const nlohmann::json::exception &ex) {
		throw FormatError(std::string("malformed session event: ") + ex.what());
	}
}

SessionController::SessionController(SessionConfig config, const Clock &mono, const Clock &utc)
    : config_(std::move(config)), mono_(mono), utc_(utc), session_id_(Uuid::random())
{
	const bool has_meta = std::any_of(config_.streams.begin(), config_.streams.end(),
	                                  [](const StreamDescriptor &d) { return d.kind == StreamKind::meta; });
	if (!has_meta) {
		StreamDescriptor m;
		m.stream_id = static_cast<std::uint32_t>(config_.streams.size());
		m.kind = StreamKind::meta;
		m.label = "session";
		m.device_binding = "session";
		config_.streams.push_back(m);
	}
	validate_stream_table(config_.streams);
}

SessionController::~SessionController() = default;

void SessionController::illegal(std::string_view action) const
{
	throw TransitionError("illegal_transition",
	                      std::string(action) + " not allowed in state " + std::string(to_string(state_)),
	                      {{"state", to_string(state_)}, {"action", action}});
}

SessionEvent &SessionController::log_locked(Actor actor, Action action, std::optional<std::string> reason,
                                            nlohmann::json detail)
{
	SessionEvent e;
	e.index = events_.size();
	e.at_ns = utc_.now_ns();
	if (!events_.empty())
		e.at_ns = std::max(e.at_ns, events_.back().at_ns);
	e.actor = actor;
	e.action = action;
	e.reason = std::move(reason);
	e.detail = std::move(detail);
	events_.push_back(std::move(e));
	return events_.back();
}

void SessionController::write_meta_locked(std::size_t from)
{
	if (!recorder_ || from >= events_.size())
		return;
	std::string lines;
	for (std::size_t i = from; i < events_.size(); ++i)
		lines += to_canonical_json(events_[i]) + "\n";
	recorder_->append_meta(lines, mono_.now_ns());
	events_written_ = events_.size();
}

void SessionController::collect_recorder_events_locked()
{
	if (!recorder_)
		return;
	const auto from = events_written_;
	for (const auto &ev : recorder_->take_events()) {
		log_locked(Actor::system, Action::stream_gap, std::nullopt,
		           {{"stream_id", ev.stream_id},
		            {"kind", ev.kind},
		            {"frames_dropped", ev.frames_dropped},
		            {"detail", ev.detail},
		            {"at_mono_ns", ev.at_ns}});
	}
	write_meta_locked(from);
}

void SessionController::advance_locked(std::int64_t now)
{
	if (!recorder_)
		return;
	recorder_->pump(now);
	collect_recorder_events_locked();
}

void SessionController::consent_participant(const ParticipantConsent &c, Actor actor)
{
	std::lock_guard lock(mutex_);
	if (state_ == SessionState::ConsentPending)
		throw TransitionError("illegal_transition", "participant consent already recorded",
		                      {{"state", to_string(state_)}, {"action", "consent_participant"}});
	if (state_ != SessionState::Idle)
		illegal("consent_participant");
	if (c.participant_code.empty())
		throw TransitionError("invalid_consent", "participant_code is required", {{"field", "participant_code"}});
	if (c.pis_version.empty())
		throw TransitionError("invalid_consent", "pis_version is required", {{"field", "pis_version"}});
	consent_.participant = c;
	log_locked(actor, Action::consent_participant, std::nullopt,
	           {{"participant_code", c.participant_code},
	            {"pis_version", c.pis_version},
	            {"participant_consent_at_ns", c.participant_consent_at_ns}});
	state_ = SessionState::ConsentPending;
}

void SessionController::consent_witness(const WitnessConsent &c, Actor actor)
{
	std::lock_guard lock(mutex_);
	if (state_ == SessionState::Idle)
		throw TransitionError("consent_order", "participant consent missing", {{"missing", "participant"}});
	if (state_ != SessionState::ConsentPending)
		illegal("consent_witness");
	if (c.witness_code.empty())
		throw TransitionError("invalid_consent", "witness_code is required", {{"field", "witness_code"}});
	if (c.witness_consent_at_ns < consent_.participant->participant_consent_at_ns)
		throw TransitionError("consent_order", "witness must sign after participant",
		                      {{"participant_consent_at_ns", consent_.participant->participant_consent_at_ns},
		                       {"witness_consent_at_ns", c.witness_consent_at_ns}});
	for (auto [flag, value] : {std::pair{"understood_pis", c.understood_pis},
	                           std::pair{"questions_answered", c.questions_answered},
	                           std::pair{"no_deception", c.no_deception}}) {
		if (!value)
			throw TransitionError("attestation_missing",
			                      std::string("witness attestation '") + flag + "' is not set", {{"flag", flag}});
	}
	consent_.witness = c;
	log_locked(actor, Action::consent_witness, std::nullopt,
	           {{"witness_code", c.witness_code},
	            {"witness_consent_at_ns", c.witness_consent_at_ns},
	            {"understood_pis", c.understood_pis},
	            {"questions_answered", c.questions_answered},
	            {"no_deception", c.no_deception}});
	state_ = SessionState::Ready;
}

void SessionController::start(Actor actor, std::optional<std::string> reason,
                              const std::set<std::uint32_t> &overrides)
{
	std::lock_guard lock(mutex_);
	check_locked(Action::start);
	// Invariant behind the gate above; checked again because it is the one
	// that must never fail open.
	if (!consent_.complete())
		throw TransitionError("consent_incomplete", "consent record incomplete");

	auto statuses = streams::probe_sources(config_.streams, config_.factory);
	nlohmann::json absent = nlohmann::json::array();
	std::vector<std::uint32_t> skipped;
	std::string names;
	for (const auto &s : statuses) {
		if (s.state == streams::SourceState::present)
			continue;
		if (overrides.count(s.stream_id)) {
			skipped.push_back(s.stream_id);
			continue;
		}
		const auto &d = config_.streams[s.stream_id];
		absent.push_back({{"stream_id", s.stream_id},
		                  {"label", d.label},
		                  {"state", streams::to_string(s.state)},
		                  {"detail", s.detail}});
		names += (names.empty() ? "" : ", ") + d.label + " (" + std::to_string(s.stream_id) + ")";
	}
	if (!absent.empty())
		throw TransitionError("sources_absent", "start refused, sources absent: " + names, {{"streams", absent}});

	std::filesystem::create_directories(config_.output_dir);
	auto path = config_.output_dir / (session_id_.str() + ".rec");
	const auto t0 = mono_.now_ns();
	container::SessionMeta meta{config_.project_id, session_id_, utc_.now_ns(), t0};
	auto writer = container::ContainerWriter::create(path, config_.recipient, meta, config_.streams,
	                                                 config_.writer);
	streams::RecorderOptions ro;
	ro.realtime = config_.realtime;
	ro.seed = config_.seed;
	ro.factory = config_.factory;
	ro.skip_streams = skipped;
	recorder_ = std::make_unique<streams::Recorder>(std::move(writer), mono_, t0, std::move(ro));
	path_ = path;

	log_locked(actor, Action::start, std::move(reason),
	           {{"container", path.filename().string()}, {"overridden_streams", skipped}});
	state_ = SessionState::Recording;
	// Consent events and the start event together form the first meta chunk.
	write_meta_locked(0);
	recorder_->begin_window(t0);
}

void SessionController::check_locked(Action action) const
{
	switch (action) {
	case Action::start:
		if (state_ == SessionState::Idle)
			throw TransitionError("consent_incomplete", "participant consent missing", {{"missing", "participant"}});
		if (state_ == SessionState::ConsentPending)
			throw TransitionError("consent_incomplete", "witness consent missing", {{"missing", "witness"}});
		if (state_ != SessionState::Ready)
			illegal("start");
		break;
	case Action::pause:
		if (state_ != SessionState::Recording)
			illegal("pause");
		break;
	case Action::resume:
		if (state_ != SessionState::Paused)
			illegal("resume");
		break;
	case Action::stop:
		if (state_ != SessionState::Recording && state_ != SessionState::Paused && state_ != SessionState::Stopped)
			illegal("stop");
		break;
	default:
		throw PreconditionError("not a session transition: " + std::string(to_string(action)));
	}
}

void SessionController::check(Action action) const
{
	std::lock_guard lock(mutex_);
	check_locked(action);
}

void SessionController::pause(Actor actor, std::optional<std::string> reason)
{
	std::lock_guard lock(mutex_);
	check_locked(Action::pause);
	const auto now = mono_.now_ns();
	advance_locked(now);
	recorder_->end_window(now);
	const auto from = events_.size();
	log_locked(actor, Action::pause, std::move(reason), {{"at_mono_ns", now}});
	state_ = SessionState::Paused;
	write_meta_locked(from);
}

void SessionController::resume(Actor actor, std::optional<std::string> reason)
{
	std::lock_guard lock(mutex_);
	check_locked(Action::resume);
	const auto now = mono_.now_ns();
	// Frames produced while paused are dropped here, before the window opens.
	advance_locked(now);
	std::int64_t paused_at = now;
	for (auto it = events_.rbegin(); it != events_.rend(); ++it) {
		if (it->action == Action::pause) {
			paused_at = it->detail.value("at_mono_ns", now);
			break;
		}
	}
	const auto from = events_.size();
	log_locked(actor, Action::resume, std::move(reason), {{"at_mono_ns", now}, {"gap_ns", now - paused_at}});
	state_ = SessionState::Recording;
	write_meta_locked(from);
	recorder_->begin_window(now);
}

StopResult SessionController::stop(Actor actor, std::optional<std::string> reason)
{
	std::lock_guard lock(mutex_);
	if (state_ == SessionState::Stopped)
		return StopResult{true};
	if (state_ != SessionState::Recording && state_ != SessionState::Paused)
		illegal("stop");
	const auto now = mono_.now_ns();
	if (state_ == SessionState::Recording) {
		advance_locked(now);
		recorder_->end_window(now);
	}
	collect_recorder_events_locked();
	const auto from = events_.size();
	log_locked(actor, Action::stop, std::move(reason), {{"at_mono_ns", now}});
	state_ = SessionState::Stopped;
	write_meta_locked(from);
	recorder_->finish(now);
	final_counters_ = recorder_->counters();
	final_chunks_ = recorder_->chunk_count();
	final_bytes_ = recorder_->bytes_written();
	recorder_.reset();
	return StopResult{false};
}

bool SessionController::log_system(Action action, nlohmann::json detail)
{
	std::lock_guard lock(mutex_);
	if (state_ == SessionState::Stopped)
		return false;
	const auto from = events_.size();
	log_locked(Actor::system, action, std::nullopt, std::move(detail));
	write_meta_locked(from);
	return true;
}

void SessionController::pump()
{
	std::lock_guard lock(mutex_);
	if (state_ == SessionState::Recording || state_ == SessionState::Paused)
		advance_locked(mono_.now_ns());
}

SessionState SessionController::state() const
{
	std::lock_guard lock(mutex_);
	return state_;
}

std::vector<SessionEvent> SessionController::events() const
{
	std::lock_guard lock(mutex_);
	return events_;
}

ConsentRecord SessionController::consent() const
{
	std::lock_guard lock(mutex_);
	return consent_;
}

std::optional<std::filesystem::path> SessionController::container_path() const
{
	std::lock_guard lock(mutex_);
	return path_;
}

std::vector<streams::SourceStatus> SessionController::probe() const
{
	return streams::probe_sources(config_.streams, config_.factory);
}

SessionSnapshot SessionController::snapshot() const
{
	std::lock_guard lock(mutex_);
	SessionSnapshot s;
	s.session_id = session_id_;
	s.state = state_;
	s.participant_consented = consent_.participant.has_value();
	s.witness_consented = consent_.witness.has_value();
	s.container_path = path_;
	s.event_count = events_.size();
	if (recorder_) {
		s.streams = recorder_->counters();
		s.chunks_written = recorder_->chunk_count();
		s.bytes_written = recorder_->bytes_written();
	} else {
		s.streams = final_counters_;
		s.chunks_written = final_chunks_;
		s.bytes_written = final_bytes_;
	}
	return s;
}

SessionState replay(const std::vector<SessionEvent> &events)
{
	SessionState s = SessionState::Idle;
	for (std::size_t i = 0; i < events.size(); ++i) {
		const auto &e = events[i];
		if (e.index != i)
			throw FormatError("event log gap at index " + std::to_string(i));
		if (i > 0 && e.at_ns < events[i - 1].at_ns)
			throw FormatError("event log out of order at index " + std::to_string(i));
		auto need = [&](std::initializer_list<SessionState> from, SessionState to) {
			if (std::find(from.begin(), from.end(), s) == from.end())
				throw FormatError("illegal " + std::string(to_string(e.action)) + " from " +
				                  std::string(to_string(s)) + " at index " + std::to_string(i));
			s = to;
		};
		switch (e.action) {
		case Action::consent_participant:
			need({SessionState::Idle}, SessionState::ConsentPending);
			break;
		case Action::consent_witness:
			need({SessionState::ConsentPending}, SessionState::Ready);
			break;
		case Action::start:
			need({SessionState::Ready}, SessionState::Recording);
			break;
		case Action::pause:
			need({SessionState::Recording}, SessionState::Paused);
			break;
		case Action::resume:
			need({SessionState::Paused}, SessionState::Recording);
			break;
		case Action::stop:
			need({SessionState::Recording, SessionState::Paused}, SessionState::Stopped);
			break;
		default:
			if (s == SessionState::Stopped)
				throw FormatError("event after stop at index " + std::to_string(i));
			break;
		}
	}
	return s;
}

std::vector<SessionEvent> parse_meta_payload(ByteView payload)
{
	std::vector<SessionEvent> out;
	std::string_view text(reinterpret_cast<const char *>(payload.data()), payload.size());
	while (!text.empty()) {
		auto nl = text.find('\n');
		auto line = text.substr(0, nl);
		text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
		if (line.empty())
			continue;
		auto j = nlohmann::json::parse(line, nullptr, false);
		if (j.is_discarded())
			throw FormatError("meta stream line is not JSON");
		// Other meta records (redaction notes) share the stream.
		if (!j.is_object() || !j.contains("action"))
			continue;
		out.push_back(event_from_json(j));
	}
	return out;
}

std::vector<SessionEvent> read_event_log(const std::filesystem::path &path, const crypto::SecretKey &priv)
{
	auto reader = container::ContainerReader::open(path, priv);
	std::vector<SessionEvent> out;
	const auto &table = reader.header().stream_table;
	while (auto chunk = reader.next()) {
		if (table[chunk->record.stream_id].kind != StreamKind::meta)
			continue;
		for (const auto &f : chunk->frames) {
			auto evs = parse_meta_payload(f.payload);
			out.insert(out.end(), evs.begin(), evs.end());
		}
	}
	return out;
}

} // namespace cusco::session
