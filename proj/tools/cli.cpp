#include "cusco/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "cusco/anonymize.hpp"
#include "cusco/daemon.hpp"
#include "cusco/redact.hpp"
#include "cusco/session.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro breaks Eigen.
#include <httplib.h>

namespace cusco::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// A step failed in a way the user should hear about, exit 1.
class Failed : public Error {
public:
	using Error::Error;
};

json read_json(const fs::path &p)
{
	std::ifstream in(p);
	if (!in)
		throw ConfigError(p.string() + ": cannot read");
	try {
		return json::parse(in);
	} catch (const json::parse_error &e) {
		throw ConfigError(p.string() + ": " + e.what());
	}
}

crypto::SecretKey private_key(const fs::path &p) { return crypto::load_private_key(p).key; }

// --- keygen ----------------------------------------------------------------

int keygen(const std::string &project, const fs::path &out_dir, bool as_json, std::ostream &out, std::ostream &err)
{
	Uuid id = Uuid::random();
	if (!project.empty()) {
		try {
			id = Uuid::parse(project);
		} catch (const FormatError &) {
			throw ConfigError("--project must be a UUID, got \"" + project + "\"");
		}
	}
	auto kp = crypto::generate_project_keys(id, SystemClock().now_ns());
	fs::create_directories(out_dir);
	const auto pub = out_dir / ("project-" + id.str() + ".pub");
	const auto priv = out_dir / ("project-" + id.str() + ".key");
	crypto::save_public_key(pub, kp);
	crypto::save_private_key(priv, kp);
	err << "WARNING: " << priv.string()
	    << " decrypts every recording of this project. Keep it off recording devices.\n";
	if (as_json)
		out << json{{"project_id", id.str()}, {"public_key", pub.string()}, {"private_key", priv.string()}}.dump()
		    << "\n";
	else
		out << "project " << id.str() << "\npublic  " << pub.string() << "\nprivate " << priv.string() << "\n";
	return kOk;
}

// --- probe -----------------------------------------------------------------

int probe(const fs::path &config, bool as_json, std::ostream &out)
{
	const auto c = daemon::DaemonConfig::load(config);
	const auto statuses = streams::probe_sources(c.streams);
	bool all = true;
	json arr = json::array();
	for (const auto &s : statuses) {
		const auto &d = c.streams[s.stream_id];
		all &= s.state == streams::SourceState::present;
		arr.push_back({{"stream_id", s.stream_id},
		               {"label", d.label},
		               {"kind", to_string(d.kind)},
		               {"state", streams::to_string(s.state)},
		               {"detail", s.detail}});
		if (!as_json)
			out << std::left << std::setw(4) << s.stream_id << std::setw(16) << d.label << std::setw(10)
			    << streams::to_string(s.state) << s.detail << "\n";
	}
	if (as_json)
		out << json{{"all_present", all}, {"streams", arr}}.dump() << "\n";
	return all ? kOk : kFailed;
}

// --- status ----------------------------------------------------------------

struct Api {
	std::unique_ptr<httplib::Client> client;
	std::string token;

	Api(const std::string &url, std::string tok) : token(std::move(tok))
	{
		client = std::make_unique<httplib::Client>(url);
		if (!client->is_valid())
			throw ConfigError("--api: cannot use " + url);
		client->set_connection_timeout(5);
		client->set_read_timeout(10);
	}

	std::pair<int, json> call(const std::string &method, const std::string &path, const json &body = nullptr)
	{
		httplib::Headers h = {{"Authorization", "Bearer " + token}};
		auto res = method == "GET" ? client->Get(path, h)
		                           : client->Post(path, h, body.is_null() ? std::string("{}") : body.dump(),
		                                          "application/json");
		if (!res)
			throw IoError("cannot reach the daemon: " + httplib::to_string(res.error()));
		auto j = json::parse(res->body, nullptr, false);
		return {res->status, j.is_discarded() ? json{{"error", res->body}} : j};
	}
};

int status(const std::string &url, const std::string &token, bool as_json, std::ostream &out, std::ostream &err)
{
	Api api(url, token);
	auto [code, body] = api.call("GET", "/v1/status");
	if (code != 200) {
		err << "status: HTTP " << code << " " << body.value("error", "") << "\n";
		return kFailed;
	}
	if (as_json) {
		out << body.dump() << "\n";
		return kOk;
	}
	out << "device   " << body["device_id"].get<std::string>() << " (" << body["role"].get<std::string>() << ")\n"
	    << "state    " << body["state"].get<std::string>() << "\n"
	    << "session  " << (body["session_id"].is_null() ? "-" : body["session_id"].get<std::string>()) << "\n"
	    << "chunks   " << body["chunks_written"] << "\n";
	for (const auto &s : body["streams"])
		out << "  stream " << s["stream_id"] << " " << s["label"].get<std::string>() << " "
		    << s.value("state", "?") << " chunks=" << s["chunks_written"] << "\n";
	for (const auto &p : body["peers"])
		out << "  peer " << p.value("device_id", p.value("address", "?")) << (p.value("lost", false) ? " LOST" : "")
		    << "\n";
	return kOk;
}

// --- verify / inspect ------------------------------------------------------

int verify(const fs::path &in, const fs::path &key, bool as_json, std::ostream &out)
{
	const auto r = container::verify_container(in, private_key(key));
	json j = {{"clean", r.clean()},
	          {"chunks_ok", r.chunks_ok},
	          {"tampered", r.tampered},
	          {"truncated_at", r.truncated_at ? json(*r.truncated_at) : json(nullptr)},
	          {"unexpected_data_at", r.unexpected_data_at ? json(*r.unexpected_data_at) : json(nullptr)},
	          {"finalized", r.finalized}};
	if (as_json) {
		out << j.dump() << "\n";
	} else {
		out << (r.clean() ? "OK" : "DAMAGED") << ": " << r.chunks_ok << " chunks verified"
		    << (r.finalized ? ", finalized" : ", not finalized") << "\n";
		for (auto t : r.tampered)
			out << "  tampered chunk " << t << "\n";
		if (r.truncated_at)
			out << "  truncated at byte " << *r.truncated_at << "\n";
		if (r.unexpected_data_at)
			out << "  unexpected data at byte " << *r.unexpected_data_at << "\n";
	}
	return r.clean() ? kOk : kFailed;
}

int inspect(const fs::path &in, const fs::path &key, bool as_json, std::ostream &out)
{
	const auto priv = private_key(key);
	auto reader = container::ContainerReader::open(in, priv);
	const auto h = reader.header();
	struct Tally {
		std::uint64_t chunks = 0, frames = 0, bytes = 0;
		std::optional<std::int64_t> first, last;
	};
	std::map<std::uint32_t, Tally> tally;
	std::vector<session::SessionEvent> events;
	std::optional<std::uint32_t> meta;
	for (const auto &d : h.stream_table)
		if (d.kind == StreamKind::meta)
			meta = d.stream_id;
	while (auto c = reader.next()) {
		auto &t = tally[c->record.stream_id];
		t.chunks++;
		t.frames += c->frames.size();
		for (const auto &f : c->frames)
			t.bytes += f.payload.size();
		if (!t.first)
			t.first = c->record.t_start_ns;
		t.last = c->record.t_end_ns;
		if (meta && c->record.stream_id == *meta)
			for (const auto &f : c->frames)
				for (auto &e : session::parse_meta_payload(f.payload))
					events.push_back(std::move(e));
	}
	const auto origin = h.session.time_origin_ns;
	json streams = json::array();
	for (const auto &d : h.stream_table) {
		json s = d;
		const auto &t = tally[d.stream_id];
		s["chunks"] = t.chunks;
		s["frames"] = t.frames;
		s["payload_bytes"] = t.bytes;
		s["t_first_s"] = t.first ? json(static_cast<double>(*t.first - origin) / kNsPerSec) : json(nullptr);
		s["t_last_s"] = t.last ? json(static_cast<double>(*t.last - origin) / kNsPerSec) : json(nullptr);
		streams.push_back(s);
	}
	json ev = json::array();
	for (const auto &e : events)
		ev.push_back(json::parse(session::to_canonical_json(e)));
	json j = {{"format_version", h.format_version},
	          {"project_id", h.session.project_id.str()},
	          {"session_id", h.session.session_id.str()},
	          {"created_at_ns", h.session.created_at_ns},
	          {"time_origin_ns", h.session.time_origin_ns},
	          {"chunk_params",
	           {{"max_chunk_bytes", h.chunk_params.max_chunk_bytes},
	            {"max_chunk_duration_ms", h.chunk_params.max_chunk_duration_ms}}},
	          {"finalized", reader.finalized()},
	          {"truncated_at", reader.truncated_at() ? json(*reader.truncated_at()) : json(nullptr)},
	          {"streams", streams},
	          {"events", ev}};
	if (as_json) {
		out << j.dump() << "\n";
		return kOk;
	}
	out << "session  " << j["session_id"].get<std::string>() << "\nproject  " << j["project_id"].get<std::string>()
	    << "\nfinalized " << (reader.finalized() ? "yes" : "no") << "\n";
	for (const auto &s : streams)
		out << "  stream " << s["stream_id"] << " " << s["kind"].get<std::string>() << " "
		    << s["label"].get<std::string>() << ": " << s["chunks"] << " chunks, " << s["frames"] << " frames\n";
	for (const auto &e : events)
		out << "  event " << e.index << " " << session::to_string(e.actor) << " " << session::to_string(e.action)
		    << (e.reason ? " (" + *e.reason + ")" : "") << "\n";
	return kOk;
}

// --- redact / export / features --------------------------------------------

int redact_cmd(const fs::path &in, const fs::path &key, const fs::path &list_path, const fs::path &out_path,
               std::uint32_t kernel, bool as_json, std::ostream &out)
{
	const auto k = crypto::load_private_key(key);
	auto list = redact::RedactionList::load(list_path);
	redact::RedactOptions opts;
	opts.kernel = kernel;
	auto rep = redact::apply_redactions(in, k.key, list, out_path, k.public_key, opts);
	const auto j = rep.to_json(list);
	if (as_json) {
		out << j.dump() << "\n";
	} else {
		out << (rep.pass() ? "PASS" : "FAIL") << ": " << list.entries.size() << " entries -> " << out_path.string()
		    << "\n";
		for (const auto &e : j["entries"])
			out << "  stream " << e["entry"]["stream_id"] << " [" << e["entry"]["t_start_s"] << ", "
			    << e["entry"]["t_end_s"] << ") " << (e["verified"].get<bool>() ? "verified" : "NOT verified")
			    << (e.contains("detail") ? " - " + e["detail"].get<std::string>() : "") << "\n";
	}
	return rep.pass() ? kOk : kFailed;
}

int export_cmd(const fs::path &in, const fs::path &key, const fs::path &out_dir, bool attest, bool as_json,
               std::ostream &out, std::ostream &err)
{
	const auto priv = private_key(key);
	auto v = redact::verify_for_export(in, priv, attest);
	if (!v.pass()) {
		if (as_json)
			out << json{{"exported", false}, {"verification", v.report().to_json(v.list())}}.dump() << "\n";
		err << "export refused: "
		    << (v.list().entries.empty() && !attest
		            ? "no redaction list is attached; pass --attest-no-redactions if none is needed"
		            : "redaction verification failed")
		    << "\n";
		return kFailed;
	}
	auto res = redact::export_plain(v, priv, out_dir);
	if (as_json) {
		json files = json::array();
		for (const auto &f : res.files)
			files.push_back({{"name", f.name}, {"stream_id", f.stream_id}, {"bytes", f.bytes}, {"sha256", f.sha256}});
		out << json{{"exported", true}, {"manifest", res.manifest.string()}, {"files", files}}.dump() << "\n";
	} else {
		for (const auto &f : res.files)
			out << f.sha256 << "  " << f.name << "\n";
		out << "manifest " << res.manifest.string() << "\n";
	}
	return kOk;
}

int features_cmd(const fs::path &in, const fs::path &key, const fs::path &config, double live_s,
                 const fs::path &out_dir, std::uint32_t window_ms, int grid, bool as_json, std::ostream &out)
{
	anonymize::ExtractOptions opts;
	opts.audio.window_ms = window_ms;
	opts.grid = grid;
	if (grid < 1 || grid > anonymize::kMaxGrid)
		throw ConfigError("--grid must lie in [1, " + std::to_string(anonymize::kMaxGrid) + "]");
	fs::create_directories(out_dir);
	const auto path = out_dir / "features.ndjson";
	std::ofstream o(path);
	if (!o)
		throw IoError("cannot write " + path.string());
	anonymize::ExtractSummary sum;
	if (!in.empty()) {
		sum = anonymize::extract_container_features(in, private_key(key), o, opts);
	} else {
		const auto c = daemon::DaemonConfig::load(config);
		sum = anonymize::extract_live_features(c.streams, live_s, o, opts);
	}
	o.close();
	const double ratio = sum.media_bytes ? static_cast<double>(sum.feature_bytes) / sum.media_bytes : 0.0;
	if (as_json)
		out << json{{"output", path.string()},        {"media_bytes", sum.media_bytes},
		            {"feature_bytes", sum.feature_bytes}, {"ratio", ratio},
		            {"audio_frames", sum.audio_frames},   {"motion_frames", sum.motion_frames}}
		           .dump()
		    << "\n";
	else
		out << path.string() << ": " << sum.feature_bytes << " bytes of features from " << sum.media_bytes
		    << " bytes of media (" << std::setprecision(3) << 100 * ratio << "%)\n";
	return kOk;
}

// --- record ------------------------------------------------------------------

struct Step {
	double at_s = 0;
	std::string what;
	json body;
	std::optional<std::string> expect_error;
};

std::vector<Step> load_script(const fs::path &p)
{
	const auto j = read_json(p);
	if (!j.contains("steps") || !j["steps"].is_array())
		throw ConfigError(p.string() + ": steps: required array");
	std::vector<Step> steps;
	static const std::set<std::string> verbs = {"consent", "start", "pause", "resume", "stop"};
	for (std::size_t i = 0; i < j["steps"].size(); ++i) {
		const auto &s = j["steps"][i];
		const auto where = p.string() + ": steps[" + std::to_string(i) + "]";
		if (!s.is_object() || !s.contains("do") || !verbs.count(s["do"].get<std::string>()))
			throw ConfigError(where + ": \"do\" must be consent, start, pause, resume or stop");
		Step st;
		st.at_s = s.value("at_s", 0.0);
		st.what = s["do"];
		st.body = s;
		st.body.erase("do");
		st.body.erase("at_s");
		st.body.erase("expect_error");
		if (s.contains("expect_error"))
			st.expect_error = s["expect_error"].get<std::string>();
		if (!steps.empty() && st.at_s < steps.back().at_s)
			throw ConfigError(where + ": at_s must not decrease");
		steps.push_back(std::move(st));
	}
	return steps;
}

// The device must not be able to decrypt what it records.
void refuse_private_keys(const std::vector<fs::path> &dirs)
{
	for (const auto &d : dirs) {
		std::error_code ec;
		if (!fs::is_directory(d, ec))
			continue;
		for (const auto &e : fs::directory_iterator(d, ec))
			if (e.is_regular_file() && crypto::is_private_key_file(e.path()))
				throw ConfigError("refusing to record: " + e.path().string() +
				                  " is a project private key. Move it off this device.");
	}
}

void check_expectation(const Step &s, std::size_t i, const std::optional<std::string> &got, const std::string &msg)
{
	const auto where = "step " + std::to_string(i) + " (" + s.what + ")";
	if (s.expect_error && !got)
		throw Failed(where + ": expected " + *s.expect_error + " but it succeeded");
	if (got && s.expect_error != got)
		throw Failed(where + ": " + *got + ": " + msg);
}

int record_inline(const fs::path &config, const fs::path &script, bool as_json, std::ostream &out)
{
	const auto c = daemon::DaemonConfig::load(config);
	c.validate();
	refuse_private_keys({fs::absolute(config).parent_path(), c.project_public_key_path.parent_path(), c.output_dir});
	const auto steps = load_script(script);
	const auto key = crypto::load_public_key(c.project_public_key_path);

	// Stepped capture on a manual clock: the script's times are exact and the
	// run takes as long as encryption does, not as long as the session.
	ManualClock mono(1000 * kNsPerSec);
	SystemClock utc;
	session::SessionConfig sc;
	sc.project_id = key.project_id;
	sc.recipient = key.key;
	sc.output_dir = c.output_dir;
	sc.streams = c.streams;
	sc.writer.chunk = c.chunk_params;
	session::SessionController s(sc, mono, utc);
	const auto t0 = mono.now_ns();

	for (std::size_t i = 0; i < steps.size(); ++i) {
		const auto &st = steps[i];
		mono.set(t0 + static_cast<std::int64_t>(st.at_s * kNsPerSec));
		s.pump();
		std::optional<std::string> code;
		std::string msg;
		try {
			const auto &b = st.body;
			auto actor = [&](session::Actor def) {
				return b.contains("actor") ? session::actor_from_string(b["actor"].get<std::string>()) : def;
			};
			std::optional<std::string> reason;
			if (b.contains("reason"))
				reason = b["reason"].get<std::string>();
			if (st.what == "consent") {
				const auto role = b.value("role", "");
				if (role == "participant")
					s.consent_participant({b.value("participant_code", ""), b.value("pis_version", ""), utc.now_ns()},
					                      actor(session::Actor::researcher));
				else if (role == "witness")
					s.consent_witness({b.value("witness_code", ""), utc.now_ns(), b.value("understood_pis", false),
					                   b.value("questions_answered", false), b.value("no_deception", false)},
					                  actor(session::Actor::witness));
				else
					throw ConfigError("consent role must be participant or witness");
			} else if (st.what == "start") {
				std::set<std::uint32_t> ov;
				for (const auto &v : b.value("overrides", json::array()))
					ov.insert(v.get<std::uint32_t>());
				s.start(actor(session::Actor::researcher), reason, ov);
			} else if (st.what == "pause") {
				s.pause(actor(session::Actor::researcher), reason);
			} else if (st.what == "resume") {
				s.resume(actor(session::Actor::researcher), reason);
			} else {
				s.stop(actor(session::Actor::researcher), reason);
			}
		} catch (const session::TransitionError &e) {
			code = e.code();
			msg = e.what();
		}
		check_expectation(st, i, code, msg);
	}
	const auto st = s.state();
	if (st == session::SessionState::Recording || st == session::SessionState::Paused)
		s.stop(session::Actor::system, "end of script");

	const auto snap = s.snapshot();
	json j = {{"session_id", snap.session_id.str()},
	          {"state", session::to_string(snap.state)},
	          {"container", snap.container_path ? json(snap.container_path->string()) : json(nullptr)},
	          {"chunks_written", snap.chunks_written},
	          {"events", snap.event_count}};
	if (as_json)
		out << j.dump() << "\n";
	else
		out << "session " << j["session_id"].get<std::string>() << " " << j["state"].get<std::string>() << ", "
		    << snap.chunks_written << " chunks, " << snap.event_count << " events\n"
		    << (snap.container_path ? snap.container_path->string() : std::string("no container")) << "\n";
	return kOk;
}

int record_api(const std::string &url, const std::string &token, const fs::path &script, bool as_json,
               std::ostream &out)
{
	const auto steps = load_script(script);
	Api api(url, token);
	auto [code, created] = api.call("POST", "/v1/session");
	if (code != 201)
		throw Failed("cannot create a session: HTTP " + std::to_string(code) + " " + created.value("error", ""));
	const auto begin = std::chrono::steady_clock::now();
	for (std::size_t i = 0; i < steps.size(); ++i) {
		const auto &st = steps[i];
		std::this_thread::sleep_until(begin + std::chrono::duration<double>(st.at_s));
		auto [c, body] = api.call("POST", "/v1/session/" + st.what, st.body);
		std::optional<std::string> err;
		if (c >= 400)
			err = body.value("error", "http_" + std::to_string(c));
		check_expectation(st, i, err, body.value("message", ""));
	}
	auto [c, status] = api.call("GET", "/v1/status");
	if (c != 200)
		throw Failed("status: HTTP " + std::to_string(c));
	if (as_json)
		out << json{{"session_id", created["session_id"]}, {"state", status["state"]}}.dump() << "\n";
	else
		out << "session " << created["session_id"].get<std::string>() << " " << status["state"].get<std::string>()
		    << "\n";
	return kOk;
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err)
{
	CLI::App app{"Encrypted multi-stream session recorder: keys, probing, verification, redaction, export and "
	             "feature extraction.",
	             "cusco"};
	app.require_subcommand(1);
	app.set_help_all_flag("--help-all", "Help for every subcommand");

	bool as_json = false;
	std::string project, api_url, token;
	fs::path out_dir, config, in, key, list, out_file, script;
	double live_s = 0;
	std::uint32_t window_ms = 500, kernel = 15;
	int grid = 4;
	bool attest = false;

	auto *kg = app.add_subcommand("keygen", "Create a project key pair (public key for devices, private key for "
	                                        "researchers)");
	kg->add_option("--project", project, "Project id (UUID); random when omitted");
	kg->add_option("--out-dir", out_dir, "Directory for the key files")->required();
	kg->add_flag("--json", as_json, "Machine-readable output");

	auto *pr = app.add_subcommand("probe", "Check that every configured source is present");
	pr->add_option("--config", config, "Daemon config file")->required()->check(CLI::ExistingFile);
	pr->add_flag("--json", as_json, "Machine-readable output");

	auto *stc = app.add_subcommand("status", "Show a running daemon's status");
	stc->add_option("--api", api_url, "Daemon API base URL, e.g. http://127.0.0.1:7400")->required();
	stc->add_option("--token", token, "API bearer token")->envname("CUSCO_API_TOKEN")->required();
	stc->add_flag("--json", as_json, "Machine-readable output");

	auto *rec = app.add_subcommand("record", "Run a scripted session inline from a config, or drive a daemon");
	auto *rec_cfg = rec->add_option("--config", config, "Daemon config file (inline mode)");
	rec->add_option("--script", script, "Session script (JSON)")->required()->check(CLI::ExistingFile);
	auto *rec_api = rec->add_option("--api", api_url, "Drive the daemon at this URL instead");
	rec->add_option("--token", token, "API bearer token (with --api)")->envname("CUSCO_API_TOKEN");
	rec_cfg->excludes(rec_api);
	rec->add_flag("--json", as_json, "Machine-readable output");

	auto *ver = app.add_subcommand("verify", "Authenticate every chunk; exit 1 on tampering or truncation");
	ver->add_option("--in", in, "Container file")->required()->check(CLI::ExistingFile);
	ver->add_option("--key", key, "Project private key")->required()->check(CLI::ExistingFile);
	ver->add_flag("--json", as_json, "Machine-readable output");

	auto *ins = app.add_subcommand("inspect", "Decrypt and summarise a container: streams, chunks, session log");
	ins->add_option("--in", in, "Container file")->required()->check(CLI::ExistingFile);
	ins->add_option("--key", key, "Project private key")->required()->check(CLI::ExistingFile);
	ins->add_flag("--json", as_json, "Machine-readable output");

	auto *red = app.add_subcommand("redact", "Silence audio and blur video regions listed in a redaction list");
	red->add_option("--in", in, "Input container")->required()->check(CLI::ExistingFile);
	red->add_option("--key", key, "Project private key")->required()->check(CLI::ExistingFile);
	red->add_option("--list", list, "Redaction list (JSON)")->required()->check(CLI::ExistingFile);
	red->add_option("--out", out_file, "Output container")->required();
	red->add_option("--kernel", kernel, "Box blur size in pixels (odd, >= 3)")->capture_default_str();
	red->add_flag("--json", as_json, "Machine-readable output");

	auto *exp = app.add_subcommand("export", "Verify redactions, then write plaintext media and a manifest");
	exp->add_option("--in", in, "Container file")->required()->check(CLI::ExistingFile);
	exp->add_option("--key", key, "Project private key")->required()->check(CLI::ExistingFile);
	exp->add_option("--out-dir", out_dir, "Output directory")->required();
	exp->add_flag("--attest-no-redactions", attest, "Confirm that this recording needs no redaction");
	exp->add_flag("--json", as_json, "Machine-readable output");

	auto *fea = app.add_subcommand("features", "Extract content-free features from a container or live sources");
	auto *fea_in = fea->add_option("--in", in, "Container file")->check(CLI::ExistingFile);
	fea->add_option("--key", key, "Project private key (with --in)")->check(CLI::ExistingFile);
	auto *fea_cfg = fea->add_option("--config", config, "Daemon config whose sources run live")
	                    ->check(CLI::ExistingFile);
	fea->add_option("--live-seconds", live_s, "Live capture duration (with --config)")->needs(fea_cfg);
	fea->add_option("--out", out_dir, "Output directory")->required();
	fea->add_option("--window-ms", window_ms, "Audio feature window")->capture_default_str();
	fea->add_option("--grid", grid, "Motion grid size")->capture_default_str();
	fea->add_flag("--json", as_json, "Machine-readable output");
	fea_in->excludes(fea_cfg);

	try {
		std::vector<std::string> rev(args.rbegin(), args.rend() - 1);
		app.parse(rev);
	} catch (const CLI::CallForHelp &) {
		out << app.help();
		return kOk;
	} catch (const CLI::CallForAllHelp &) {
		out << app.help("", CLI::AppFormatMode::All);
		return kOk;
	} catch (const CLI::ParseError &e) {
		err << "cusco: " << e.what() << "\n\n" << app.help();
		return kUsage;
	}

	try {
		if (*kg)
			return keygen(project, out_dir, as_json, out, err);
		if (*pr)
			return probe(config, as_json, out);
		if (*stc)
			return status(api_url, token, as_json, out, err);
		if (*rec) {
			if (!api_url.empty())
				return record_api(api_url, token, script, as_json, out);
			if (config.empty())
				throw ConfigError("record needs --config (inline) or --api (daemon)");
			return record_inline(config, script, as_json, out);
		}
		if (*ver)
			return verify(in, key, as_json, out);
		if (*ins)
			return inspect(in, key, as_json, out);
		if (*red)
			return redact_cmd(in, key, list, out_file, kernel, as_json, out);
		if (*exp)
			return export_cmd(in, key, out_dir, attest, as_json, out, err);
		if (*fea) {
			if (in.empty() && config.empty())
				throw ConfigError("features needs --in and --key, or --config and --live-seconds");
			if (!in.empty() && key.empty())
				throw ConfigError("features --in needs --key");
			return features_cmd(in, key, config, live_s, out_dir, window_ms, grid, as_json, out);
		}
	} catch (const ConfigError &e) {
		err << "cusco: " << e.what() << "\n";
		return kUsage;
	} catch (const Error &e) {
		err << "cusco: " << e.what() << "\n";
		return kFailed;
	} catch (const std::filesystem::filesystem_error &e) {
		err << "cusco: " << e.what() << "\n";
		return kFailed;
	}
	return kUsage;
}

} // namespace cusco::cli
