#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "cusco/coord_tcp.hpp"
#include "cusco/session.hpp"

// The recording service: config, session hosting, coordination and the /v1
// JSON API. Media and key material never leave through the API.
namespace cusco::daemon {

struct DaemonConfig {
	std::string device_id;
	coord::Role role = coord::Role::leader;
	std::optional<coord::tcp::Endpoint> leader_address;
	coord::tcp::Endpoint listen_address;
	coord::tcp::Endpoint api_listen_address;
	std::string api_token;
	std::filesystem::path project_public_key_path;
	std::filesystem::path output_dir;
	std::vector<StreamDescriptor> streams;
	container::ChunkParams chunk_params;
	// Static panel files served at "/", when set.
	std::optional<std::filesystem::path> panel_dir;
	std::uint32_t schedule_lead_ms = 500;

	// ConfigError messages start with the JSON path of the bad field, e.g.
	// "streams[2].video.fps: ...". Relative paths resolve against `base_dir`.
	static DaemonConfig from_json(const nlohmann::json &j, const std::filesystem::path &base_dir = {});
	static DaemonConfig load(const std::filesystem::path &path);

	// CUSCO_LISTEN, CUSCO_API_LISTEN, CUSCO_API_TOKEN.
	void apply_env(const std::function<const char *(const char *)> &getenv);
	void validate() const;
};

struct Response {
	int status = 200;
	nlohmann::json body;
};

struct Route {
	std::string method;
	std::string path;
};

// Every API route. The audit test walks this table.
const std::vector<Route> &routes();

class Daemon {
public:
	// Reads the public key; ConfigError when it is missing or malformed.
	Daemon(DaemonConfig config, const Clock &mono, const Clock &utc);
	~Daemon();
	Daemon(const Daemon &) = delete;
	Daemon &operator=(const Daemon &) = delete;

	// Binds the API and the coordination endpoint. IoError if a port is busy.
	void start();
	// Stops a live session as a system stop, says BYE to peers and closes
	// the listeners. Safe to call twice.
	void shutdown();

	std::uint16_t api_port() const;
	std::optional<std::uint16_t> coord_port() const;

	// Transport-free request handling; the HTTP server is a thin shell over
	// this. `authorization` is the raw header value.
	Response handle(std::string_view method, std::string_view path, std::string_view authorization,
	                std::string_view body);

	nlohmann::json status() const;
	std::shared_ptr<session::SessionController> session() const;
	const DaemonConfig &config() const { return config_; }

private:
	Response route(std::string_view method, std::string_view path, const nlohmann::json &body);
	Response create_session();
	Response consent(const nlohmann::json &body);
	Response transition(session::Action action, const nlohmann::json &body);
	nlohmann::json streams_json() const;
	nlohmann::json peers_json() const;
	void execute(session::Action action, session::Actor actor);
	void on_coord_event(const coord::CoordEvent &e);
	void housekeeping(std::stop_token st);

	DaemonConfig config_;
	const Clock &mono_;
	const Clock &utc_;
	crypto::PublicKeyFile key_;
	std::int64_t started_at_;
	Uuid self_ = Uuid::random();

	mutable std::mutex mutex_;
	std::shared_ptr<session::SessionController> session_;
	std::vector<streams::SourceStatus> probed_;
	std::deque<nlohmann::json> coord_events_;
	// Reason and overrides for a scheduled action until it executes here.
	std::map<session::Action, std::pair<std::optional<std::string>, std::set<std::uint32_t>>> pending_;

	std::unique_ptr<coord::Agent> agent_;
	std::unique_ptr<coord::tcp::CoordRuntime> runtime_;
	struct Http;
	std::unique_ptr<Http> http_;
	std::jthread housekeeping_;
	bool shut_down_ = false;
};

} // namespace cusco::daemon
