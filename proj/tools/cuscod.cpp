#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "cusco/daemon.hpp"

namespace {

constexpr int kClean = 0;
constexpr int kConfig = 2;
constexpr int kFatal = 3;

} // namespace

int main(int argc, char **argv)
{
	CLI::App app{"Recording daemon: hosts the session, coordinates devices and serves the /v1 API.", "cuscod"};
	std::filesystem::path config;
	bool check_only = false;
	app.add_option("--config", config, "Daemon config file (JSON)")->required();
	app.add_flag("--check", check_only, "Validate the config and key, then exit");
	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError &e) {
		const int rc = app.exit(e);
		return rc == 0 ? kClean : kConfig;
	}

	// Block the shutdown signals before any thread starts so only sigwait
	// below sees them.
	sigset_t sigs;
	sigemptyset(&sigs);
	sigaddset(&sigs, SIGTERM);
	sigaddset(&sigs, SIGINT);
	pthread_sigmask(SIG_BLOCK, &sigs, nullptr);
	std::signal(SIGPIPE, SIG_IGN);

	std::unique_ptr<cusco::daemon::Daemon> d;
	cusco::SteadyClock mono;
	cusco::SystemClock utc;
	try {
		auto cfg = cusco::daemon::DaemonConfig::load(config);
		cfg.apply_env([](const char *k) { return std::getenv(k); });
		d = std::make_unique<cusco::daemon::Daemon>(std::move(cfg), mono, utc);
		if (check_only) {
			std::cout << "config ok\n";
			return kClean;
		}
		d->start();
	} catch (const cusco::ConfigError &e) {
		std::cerr << "cuscod: config error: " << e.what() << "\n";
		return kConfig;
	} catch (const std::exception &e) {
		std::cerr << "cuscod: " << e.what() << "\n";
		return kFatal;
	}

	const auto &c = d->config();
	std::cerr << "cuscod: " << c.device_id << " (" << (c.role == cusco::coord::Role::leader ? "leader" : "follower")
	          << ") api on " << c.api_listen_address.host << ":" << d->api_port();
	if (auto p = d->coord_port())
		std::cerr << ", coordination on " << c.listen_address.host << ":" << *p;
	std::cerr << std::endl;

	int sig = 0;
	sigwait(&sigs, &sig);
	std::cerr << "cuscod: signal " << sig << ", stopping" << std::endl;
	try {
		d->shutdown();
	} catch (const std::exception &e) {
		std::cerr << "cuscod: shutdown: " << e.what() << "\n";
		return kFatal;
	}
	return kClean;
}
