#include "cusco/daemon.hpp"

#include <fstream>

#include <httplib.h>
#include <sodium.h>

namespace cusco::daemon {

namespace fs = std::filesystem;
using nlohmann::json;
using session::Action;
using session::Actor;

namespace {

constexpr std::size_t kCoordEventHistory = 50;

[[noreturn]] void bad(const std::string &path, const std::string &what) { throw ConfigError(path + ": " + what); }

template <class T> T get_as(const json &j, const std::string &path)
{
	try {
		return j.get<T>();
	} catch (const json::exception &) {
		bad(path, "expected " + std::string(std::is_same_v<T, std::string> ? "a string" : "a number") + ", got " +
		              j.dump());
	}
}

coord::tcp::Endpoint endpoint(const json &j, const std::string &path)
{
	try {
		return coord::tcp::Endpoint::parse(get_as<std::string>(j, path));
	} catch (const ConfigError &e) {
		if (std::string_view(e.what()).starts_with(path))
			throw;
		bad(path, e.what());
	}
}

fs::path resolve(const fs::path &p, const fs::path &base) { return p.is_absolute() || base.empty() ? p : base / p; }

Actor request_actor(const json &body)
{
	if (!body.contains("actor"))
		throw ConfigError("actor is required");
	const auto a = session::actor_from_string(get_as<std::string>(body["actor"], "actor"));
	if (a == Actor::system)
		throw ConfigError("actor: system is reserved for the daemon");
	return a;
}

std::optional<std::string> request_reason(const json &body)
{
	if (!body.contains("reason") || body["reason"].is_null())
		return std::nullopt;
	return get_as<std::string>(body["reason"], "reason");
}

Response error(int status, std::string code, const std::string &message, json detail = json::object())
{
	json body = {{"error", std::move(code)}, {"message", message}};
	if (detail.is_object())
		for (auto &[k, v] : detail.items())
			body[k] = v;
	return {status, body};
}

bool token_matches(std::string_view header, const std::string &token)
{
	constexpr std::string_view prefix = "Bearer ";
	if (!header.starts_with(prefix))
		return false;
	header.remove_prefix(prefix.size());
	if (header.size() != token.size())
		return false;
	return sodium_memcmp(header.data(), token.data(), token.size()) == 0;
}

json opt_ns(const std::optional<std::int64_t> &v) { return v ? json(*v) : json(nullptr); }

} // namespace

// ---------------------------------------------------------------------------

DaemonConfig DaemonConfig::from_json(const json &j, const fs::path &base_dir)
{
	if (!j.is_object())
		bad("$", "config must be a JSON object");
	static const std::set<std::string> known = {
	    "device_id",  "role",           "leader_address", "listen_address", "api_listen_address",
	    "api_token",  "project_public_key_path", "output_dir", "streams", "chunk_params",
	    "panel_dir",  "schedule_lead_ms"};
	for (auto &[k, v] : j.items())
		if (!known.count(k))
			bad(k, "unknown field");
	auto require = [&](const char *key) -> const json & {
		if (!j.contains(key))
			bad(key, "required");
		return j.at(key);
	};

	DaemonConfig c;
	c.device_id = get_as<std::string>(require("device_id"), "device_id");
	const auto role = get_as<std::string>(require("role"), "role");
	if (role == "leader")
		c.role = coord::Role::leader;
	else if (role == "follower")
		c.role = coord::Role::follower;
	else
		bad("role", "must be \"leader\" or \"follower\", got \"" + role + "\"");
	if (j.contains("leader_address") && !j["leader_address"].is_null())
		c.leader_address = endpoint(j["leader_address"], "leader_address");
	c.listen_address = j.contains("listen_address") ? endpoint(j["listen_address"], "listen_address")
	                                                : coord::tcp::Endpoint{"0.0.0.0", 7410};
	c.api_listen_address = endpoint(require("api_listen_address"), "api_listen_address");
	c.api_token = get_as<std::string>(require("api_token"), "api_token");
	c.project_public_key_path =
	    resolve(get_as<std::string>(require("project_public_key_path"), "project_public_key_path"), base_dir);
	c.output_dir = resolve(get_as<std::string>(require("output_dir"), "output_dir"), base_dir);
	if (j.contains("panel_dir") && !j["panel_dir"].is_null())
		c.panel_dir = resolve(get_as<std::string>(j["panel_dir"], "panel_dir"), base_dir);
	if (j.contains("schedule_lead_ms"))
		c.schedule_lead_ms = get_as<std::uint32_t>(j["schedule_lead_ms"], "schedule_lead_ms");

	if (j.contains("chunk_params")) {
		const auto &cp = j["chunk_params"];
		if (!cp.is_object())
			bad("chunk_params", "must be an object");
		for (auto &[k, v] : cp.items()) {
			if (k == "max_chunk_bytes")
				c.chunk_params.max_chunk_bytes = get_as<std::uint64_t>(v, "chunk_params.max_chunk_bytes");
			else if (k == "max_chunk_duration_ms")
				c.chunk_params.max_chunk_duration_ms = get_as<std::uint64_t>(v, "chunk_params.max_chunk_duration_ms");
			else
				bad("chunk_params." + k, "unknown field");
		}
	}

	const auto &streams = require("streams");
	if (!streams.is_array() || streams.empty())
		bad("streams", "must be a non-empty array");
	for (std::size_t i = 0; i < streams.size(); ++i) {
		const auto path = "streams[" + std::to_string(i) + "]";
		try {
			auto d = streams[i].get<StreamDescriptor>();
			cusco::validate(d);
			c.streams.push_back(std::move(d));
		} catch (const json::exception &e) {
			bad(path, e.what());
		} catch (const Error &e) {
			bad(path, e.what());
		}
	}
	return c;
}

DaemonConfig DaemonConfig::load(const fs::path &path)
{
	std::ifstream in(path);
	if (!in)
		throw ConfigError(path.string() + ": cannot read config file");
	json j;
	try {
		j = json::parse(in);
	} catch (const json::parse_error &e) {
		throw ConfigError(path.string() + ": " + e.what());
	}
	return from_json(j, path.parent_path());
}

void DaemonConfig::apply_env(const std::function<const char *(const char *)> &getenv)
{
	if (const char *v = getenv("CUSCO_LISTEN"); v && *v)
		listen_address = endpoint(v, "CUSCO_LISTEN");
	if (const char *v = getenv("CUSCO_API_LISTEN"); v && *v)
		api_listen_address = endpoint(v, "CUSCO_API_LISTEN");
	if (const char *v = getenv("CUSCO_API_TOKEN"); v && *v)
		api_token = v;
}

void DaemonConfig::validate() const
{
	if (device_id.empty())
		bad("device_id", "must not be empty");
	if (role == coord::Role::follower && !leader_address)
		bad("leader_address", "required for a follower");
	if (api_token.empty())
		bad("api_token", "must not be empty");
	if (schedule_lead_ms < 50 || schedule_lead_ms > 10000)
		bad("schedule_lead_ms", "must lie in [50, 10000]");
	try {
		validate_stream_table(streams);
	} catch (const ConfigError &e) {
		bad("streams", e.what());
	}
	std::error_code ec;
	fs::create_directories(output_dir, ec);
	const auto probe = output_dir / ".cusco-write-test";
	{
		std::ofstream o(probe);
		if (!o)
			bad("output_dir", output_dir.string() + " is not writable");
	}
	fs::remove(probe, ec);
}

const std::vector<Route> &routes()
{
	static const std::vector<Route> r = {
	    {"GET", "/v1/status"},           {"GET", "/v1/streams"},         {"GET", "/v1/peers"},
	    {"POST", "/v1/session"},         {"POST", "/v1/session/consent"}, {"POST", "/v1/session/start"},
	    {"POST", "/v1/session/pause"},   {"POST", "/v1/session/resume"}, {"POST", "/v1/session/stop"},
	};
	return r;
}

// ---------------------------------------------------------------------------

struct Daemon::Http {
	httplib::Server server;
	std::thread thread;
	int port = 0;
};

Daemon::Daemon(DaemonConfig config, const Clock &mono, const Clock &utc)
    : config_(std::move(config)), mono_(mono), utc_(utc), started_at_(mono.now_ns())
{
	config_.validate();
	if (crypto::is_private_key_file(config_.project_public_key_path))
		bad("project_public_key_path",
		    config_.project_public_key_path.string() + " is a private key; a recording device holds the public key only");
	try {
		key_ = crypto::load_public_key(config_.project_public_key_path);
	} catch (const Error &e) {
		bad("project_public_key_path", e.what());
	}
	if (config_.panel_dir && !fs::is_directory(*config_.panel_dir))
		bad("panel_dir", config_.panel_dir->string() + " is not a directory");
	probed_ = streams::probe_sources(config_.streams);
}

Daemon::~Daemon()
{
	try {
		shutdown();
	} catch (...) {
	}
}

void Daemon::start()
{
	coord::CoordConfig cc;
	cc.device_id = config_.device_id;
	auto exec = [this](Action a, Actor actor, std::int64_t) { execute(a, actor); };
	auto state = [this] {
		auto s = session();
		return s ? s->state() : session::SessionState::Idle;
	};
	coord::tcp::CoordRuntime::Options opts;
	if (config_.role == coord::Role::leader) {
		agent_ = std::make_unique<coord::LeaderAgent>(self_, cc, exec, state);
		opts.listen = config_.listen_address;
	} else {
		auto chunks = [this]() -> std::uint64_t {
			auto s = session();
			return s ? s->snapshot().chunks_written : 0;
		};
		agent_ = std::make_unique<coord::FollowerAgent>(self_, cc, exec, state, chunks);
		opts.leader = config_.leader_address;
	}
	try {
		runtime_ = std::make_unique<coord::tcp::CoordRuntime>(*agent_, mono_, opts,
		                                                      [this](const coord::CoordEvent &e) { on_coord_event(e); });
	} catch (const IoError &e) {
		throw IoError("coordination endpoint " + config_.listen_address.str() + ": " + e.what());
	}

	http_ = std::make_unique<Http>();
	auto &svr = http_->server;
	auto api = [this](const httplib::Request &req, httplib::Response &res) {
		auto r = handle(req.method, req.path, req.get_header_value("Authorization"), req.body);
		res.status = r.status;
		res.set_content(r.body.dump(), "application/json");
	};
	const std::string pattern = R"(/v1(/.*)?)";
	svr.Get(pattern, api);
	svr.Post(pattern, api);
	svr.Put(pattern, api);
	svr.Delete(pattern, api);
	svr.Patch(pattern, api);
	if (config_.panel_dir)
		svr.set_mount_point("/", config_.panel_dir->string());
	svr.set_error_handler([](const httplib::Request &, httplib::Response &res) {
		if (!res.body.empty())
			return httplib::Server::HandlerResponse::Unhandled;
		res.set_content(json{{"error", "not_found"}}.dump(), "application/json");
		return httplib::Server::HandlerResponse::Handled;
	});
	// httplib's default adds SO_REUSEPORT, which would let a second daemon
	// share a busy port instead of failing.
	svr.set_socket_options([](socket_t sock) {
		int yes = 1;
		::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
	});
	const auto &ep = config_.api_listen_address;
	if (ep.port == 0)
		http_->port = svr.bind_to_any_port(ep.host);
	else
		http_->port = svr.bind_to_port(ep.host, ep.port) ? ep.port : -1;
	if (http_->port <= 0)
		throw IoError("cannot bind the API to " + ep.str() + " (port busy or address unavailable)");
	http_->thread = std::thread([this] { http_->server.listen_after_bind(); });
	housekeeping_ = std::jthread([this](std::stop_token st) { housekeeping(st); });
}

void Daemon::shutdown()
{
	{
		std::lock_guard lock(mutex_);
		if (shut_down_)
			return;
		shut_down_ = true;
	}
	if (auto s = session()) {
		const auto st = s->state();
		if (st == session::SessionState::Recording || st == session::SessionState::Paused)
			s->stop(Actor::system, "daemon shutdown");
	}
	if (housekeeping_.joinable()) {
		housekeeping_.request_stop();
		housekeeping_.join();
	}
	if (http_) {
		http_->server.stop();
		if (http_->thread.joinable())
			http_->thread.join();
	}
	if (runtime_)
		runtime_->stop();
}

std::uint16_t Daemon::api_port() const { return http_ ? static_cast<std::uint16_t>(http_->port) : 0; }

std::optional<std::uint16_t> Daemon::coord_port() const
{
	if (!runtime_ || config_.role != coord::Role::leader)
		return std::nullopt;
	return runtime_->listen_port();
}

std::shared_ptr<session::SessionController> Daemon::session() const
{
	std::lock_guard lock(mutex_);
	return session_;
}

void Daemon::housekeeping(std::stop_token st)
{
	while (!st.stop_requested()) {
		if (auto s = session())
			s->pump();
		std::this_thread::sleep_for(std::chrono::milliseconds(50));
	}
}

// ---------------------------------------------------------------------------

Response Daemon::handle(std::string_view method, std::string_view path, std::string_view authorization,
                        std::string_view body)
{
	if (!token_matches(authorization, config_.api_token))
		return error(401, "unauthorized", "missing or wrong bearer token");
	json j = json::object();
	if (!body.empty()) {
		j = json::parse(body, nullptr, false);
		if (j.is_discarded() || !j.is_object())
			return error(422, "invalid_request", "body must be a JSON object");
	}
	try {
		return route(method, path, j);
	} catch (const session::TransitionError &e) {
		return error(409, e.code(), e.what(), e.detail());
	} catch (const coord::StalePeersError &e) {
		return error(409, "stale_peers", e.what(), {{"peers", e.peers()}});
	} catch (const ConfigError &e) {
		return error(422, "invalid_request", e.what());
	} catch (const FormatError &e) {
		return error(422, "invalid_request", e.what());
	} catch (const PreconditionError &e) {
		return error(409, "precondition_failed", e.what());
	} catch (const Error &e) {
		return error(500, "internal", e.what());
	}
}

Response Daemon::route(std::string_view method, std::string_view path, const json &body)
{
	bool known = false;
	for (const auto &r : routes())
		if (r.path == path) {
			known = true;
			if (r.method == method)
				goto matched;
		}
	if (known)
		return error(405, "method_not_allowed", std::string(method) + " " + std::string(path));
	return error(404, "not_found", std::string(path));
matched:
	if (path == "/v1/status")
		return {200, status()};
	if (path == "/v1/streams")
		return {200, {{"streams", streams_json()}}};
	if (path == "/v1/peers")
		return {200, {{"peers", peers_json()}}};
	if (path == "/v1/session")
		return create_session();
	if (path == "/v1/session/consent")
		return consent(body);
	if (path == "/v1/session/start")
		return transition(Action::start, body);
	if (path == "/v1/session/pause")
		return transition(Action::pause, body);
	if (path == "/v1/session/resume")
		return transition(Action::resume, body);
	return transition(Action::stop, body);
}

Response Daemon::create_session()
{
	std::shared_ptr<session::SessionController> s;
	{
		std::lock_guard lock(mutex_);
		if (session_) {
			const auto st = session_->state();
			if (st == session::SessionState::Recording || st == session::SessionState::Paused)
				return error(409, "session_active", "stop the current session first",
				             {{"session_id", session_->session_id().str()}, {"state", session::to_string(st)}});
		}
		session::SessionConfig sc;
		sc.project_id = key_.project_id;
		sc.recipient = key_.key;
		sc.output_dir = config_.output_dir;
		sc.streams = config_.streams;
		sc.writer.chunk = config_.chunk_params;
		sc.realtime = true;
		session_ = std::make_shared<session::SessionController>(std::move(sc), mono_, utc_);
		probed_ = session_->probe();
		s = session_;
	}
	if (config_.role == coord::Role::leader && runtime_)
		runtime_->with_agent([&](coord::Agent &a) {
			static_cast<coord::LeaderAgent &>(a).set_session(s->session_id());
			return 0;
		});
	return {201, {{"session_id", s->session_id().str()}, {"state", session::to_string(s->state())}}};
}

Response Daemon::consent(const json &body)
{
	auto s = session();
	if (!s)
		return error(409, "no_session", "create a session first");
	const auto role = get_as<std::string>(body.value("role", json("")), "role");
	auto str = [&](const char *k) { return body.contains(k) ? get_as<std::string>(body[k], k) : std::string(); };
	auto flag = [&](const char *k) {
		if (!body.contains(k))
			return false;
		if (!body[k].is_boolean())
			throw ConfigError(std::string(k) + ": expected true or false");
		return body[k].get<bool>();
	};
	if (role == "participant") {
		session::ParticipantConsent c{str("participant_code"), str("pis_version"), utc_.now_ns()};
		s->consent_participant(c, body.contains("actor") ? request_actor(body) : Actor::researcher);
	} else if (role == "witness") {
		session::WitnessConsent c{str("witness_code"), utc_.now_ns(), flag("understood_pis"),
		                          flag("questions_answered"), flag("no_deception")};
		s->consent_witness(c, body.contains("actor") ? request_actor(body) : Actor::witness);
	} else {
		throw ConfigError("role: must be \"participant\" or \"witness\"");
	}
	return {200, {{"state", session::to_string(s->state())}}};
}

Response Daemon::transition(Action action, const json &body)
{
	auto s = session();
	if (!s)
		return error(409, "no_session", "create a session first");
	const auto actor = request_actor(body);
	const auto reason = request_reason(body);
	std::set<std::uint32_t> overrides;
	if (body.contains("overrides")) {
		if (action != Action::start || !body["overrides"].is_array())
			throw ConfigError("overrides: a list of stream ids, start only");
		for (const auto &v : body["overrides"])
			overrides.insert(get_as<std::uint32_t>(v, "overrides[]"));
	}

	const bool coordinated =
	    config_.role == coord::Role::leader && runtime_ && runtime_->with_agent([](coord::Agent &a) {
		    for (const auto &p : static_cast<coord::LeaderAgent &>(a).peers())
			    if (!p.departed)
				    return true;
		    return false;
	    });

	if (!coordinated) {
		switch (action) {
		case Action::start:
			s->start(actor, reason, overrides);
			break;
		case Action::pause:
			s->pause(actor, reason);
			break;
		case Action::resume:
			s->resume(actor, reason);
			break;
		default:
			if (s->stop(actor, reason).already_stopped)
				return {200, {{"state", "Stopped"}, {"already_stopped", true}}};
		}
		return {200, {{"state", session::to_string(s->state())}}};
	}

	s->check(action);
	if (action == Action::stop && s->state() == session::SessionState::Stopped)
		return {200, {{"state", "Stopped"}, {"already_stopped", true}}};
	{
		std::lock_guard lock(mutex_);
		pending_[action] = {reason, overrides};
	}
	const auto lead = static_cast<std::int64_t>(config_.schedule_lead_ms) * 1'000'000;
	coord::ScheduleOutcome out;
	try {
		out = runtime_->with_agent([&](coord::Agent &a) {
			return static_cast<coord::LeaderAgent &>(a).schedule(action, actor, lead, mono_.now_ns());
		});
	} catch (...) {
		std::lock_guard lock(mutex_);
		pending_.erase(action);
		throw;
	}
	runtime_->dispatch(out.messages);
	return {202,
	        {{"state", session::to_string(s->state())},
	         {"scheduled",
	          {{"action", session::to_string(action)},
	           {"msg_seq", out.msg_seq},
	           {"execute_at_ns", out.execute_at_leader_ns},
	           {"lead_ms", config_.schedule_lead_ms}}}}};
}

void Daemon::execute(Action action, Actor actor)
{
	auto s = session();
	if (!s)
		throw PreconditionError("no session on this device");
	std::optional<std::string> reason;
	std::set<std::uint32_t> overrides;
	{
		std::lock_guard lock(mutex_);
		if (auto it = pending_.find(action); it != pending_.end()) {
			std::tie(reason, overrides) = it->second;
			pending_.erase(it);
		}
	}
	switch (action) {
	case Action::start:
		s->start(actor, reason, overrides);
		break;
	case Action::pause:
		s->pause(actor, reason);
		break;
	case Action::resume:
		s->resume(actor, reason);
		break;
	case Action::stop:
		s->stop(actor, reason);
		break;
	default:
		throw PreconditionError("not a schedulable action");
	}
}

void Daemon::on_coord_event(const coord::CoordEvent &e)
{
	json detail = e.detail;
	if (!e.peer.empty())
		detail["peer"] = e.peer;
	if (auto s = session()) {
		if (e.kind == "peer_lost")
			s->log_system(Action::peer_lost, detail);
		else if (e.kind == "peer_recovered")
			s->log_system(Action::peer_recovered, detail);
		else if (e.kind == "state_divergence")
			s->log_system(Action::state_divergence, detail);
	}
	std::lock_guard lock(mutex_);
	coord_events_.push_back({{"kind", e.kind}, {"peer", e.peer}, {"detail", e.detail}, {"at_ns", e.at_ns}});
	while (coord_events_.size() > kCoordEventHistory)
		coord_events_.pop_front();
}

// ---------------------------------------------------------------------------

json Daemon::streams_json() const
{
	std::shared_ptr<session::SessionController> s;
	std::vector<streams::SourceStatus> probed;
	{
		std::lock_guard lock(mutex_);
		s = session_;
		probed = probed_;
	}
	std::vector<streams::StreamCounters> counters;
	if (s)
		counters = s->snapshot().streams;
	json out = json::array();
	for (const auto &d : config_.streams) {
		json j = {{"stream_id", d.stream_id}, {"label", d.label}, {"kind", to_string(d.kind)},
		          {"device_binding", d.device_binding}};
		const streams::SourceStatus *st = nullptr;
		for (const auto &p : probed)
			if (p.stream_id == d.stream_id)
				st = &p;
		std::uint64_t chunks = 0, frames = 0, dropped_paused = 0, dropped_overflow = 0;
		for (const auto &c : counters)
			if (c.stream_id == d.stream_id) {
				st = &c.status;
				chunks = c.chunks_written;
				frames = c.frames_captured;
				dropped_paused = c.frames_dropped_paused;
				dropped_overflow = c.frames_dropped_overflow;
			}
		if (st) {
			j["state"] = streams::to_string(st->state);
			j["detail"] = st->detail;
			j["last_frame_at_ns"] = opt_ns(st->last_frame_at_ns);
		}
		j["chunks_written"] = chunks;
		j["frames_captured"] = frames;
		j["frames_dropped_paused"] = dropped_paused;
		j["frames_dropped_overflow"] = dropped_overflow;
		out.push_back(j);
	}
	return out;
}

json Daemon::peers_json() const
{
	if (!runtime_)
		return json::array();
	const auto now = mono_.now_ns();
	if (config_.role == coord::Role::leader) {
		return runtime_->with_agent([&](coord::Agent &a) {
			json out = json::array();
			for (const auto &p : static_cast<coord::LeaderAgent &>(a).peers()) {
				json j = {{"peer_id", p.peer_id.str()},
				          {"device_id", p.device_id},
				          {"role", "follower"},
				          {"state", session::to_string(p.state)},
				          {"lost", p.lost},
				          {"departed", p.departed},
				          {"clock_offset_ns", p.clock_offset_ns},
				          {"offset_uncertainty_ns", p.offset_uncertainty_ns},
				          {"last_heartbeat_at_ns", opt_ns(p.last_heartbeat_at)},
				          {"sync_age_s", p.synced_at ? json(static_cast<double>(now - *p.synced_at) / kNsPerSec)
				                                     : json(nullptr)}};
				out.push_back(j);
			}
			return out;
		});
	}
	return runtime_->with_agent([&](coord::Agent &a) {
		const auto &f = static_cast<coord::FollowerAgent &>(a);
		json j = {{"role", "leader"},
		          {"address", config_.leader_address->str()},
		          {"lost", f.leader_lost()},
		          {"synced", f.synced_at().has_value()},
		          {"executed", f.executed_count()}};
		if (auto e = f.estimate()) {
			j["clock_offset_ns"] = e->offset_ns;
			j["offset_uncertainty_ns"] = e->uncertainty_ns;
		}
		j["sync_age_s"] = f.synced_at() ? json(static_cast<double>(now - *f.synced_at()) / kNsPerSec) : json(nullptr);
		return json::array({j});
	});
}

json Daemon::status() const
{
	auto s = session();
	json j = {{"device_id", config_.device_id},
	          {"role", config_.role == coord::Role::leader ? "leader" : "follower"},
	          {"state", "Idle"},
	          {"session_id", nullptr},
	          {"container", nullptr},
	          {"consent", {{"participant", false}, {"witness", false}}},
	          {"chunks_written", 0},
	          {"bytes_written", 0},
	          {"event_count", 0}};
	if (s) {
		const auto snap = s->snapshot();
		j["state"] = session::to_string(snap.state);
		j["session_id"] = snap.session_id.str();
		if (snap.container_path)
			j["container"] = snap.container_path->filename().string();
		j["consent"] = {{"participant", snap.participant_consented}, {"witness", snap.witness_consented}};
		j["chunks_written"] = snap.chunks_written;
		j["bytes_written"] = snap.bytes_written;
		j["event_count"] = snap.event_count;
	}
	j["streams"] = streams_json();
	j["peers"] = peers_json();
	std::error_code ec;
	const auto space = fs::space(config_.output_dir, ec);
	j["disk_free_bytes"] = ec ? json(nullptr) : json(space.available);
	j["uptime_s"] = static_cast<double>(mono_.now_ns() - started_at_) / kNsPerSec;
	std::lock_guard lock(mutex_);
	j["coord_events"] = json(std::vector<json>(coord_events_.begin(), coord_events_.end()));
	return j;
}

} // namespace cusco::daemon
