#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "cusco/cli.hpp"
#include "cusco/container.hpp"
#include "cusco/session.hpp"
#include "support/test_support.hpp"

using namespace cusco;
using nlohmann::json;
using cusco::test::TempDir;
namespace fs = std::filesystem;

namespace {

struct Run {
	int rc;
	std::string out, err;
	json j() const { return json::parse(out); }
};

Run cusco_cmd(std::vector<std::string> args)
{
	args.insert(args.begin(), "cusco");
	std::ostringstream out, err;
	const int rc = cli::run(args, out, err);
	return {rc, out.str(), err.str()};
}

void write_json(const fs::path &p, const json &j) { std::ofstream(p) << j.dump(2); }

// A project with keys, a device config and a recorded container.
struct Project {
	TempDir dir;
	fs::path pub, priv, cfg, container;

	Project()
	{
		auto kg = cusco_cmd({"keygen", "--project", "0f1e2d3c-4b5a-6978-8796-a5b4c3d2e1f0", "--out-dir",
		                     (dir / "vault").string(), "--json"});
		REQUIRE(kg.rc == 0);
		priv = kg.j()["private_key"].get<std::string>();
		fs::create_directories(dir / "device/keys");
		pub = dir / "device/keys/project.pub";
		fs::copy_file(kg.j()["public_key"].get<std::string>(), pub);
		cfg = dir / "device/config.json";
		write_json(cfg, {{"device_id", "dev-a"},
		                 {"role", "leader"},
		                 {"api_token", "t"},
		                 {"api_listen_address", "127.0.0.1:7400"},
		                 {"project_public_key_path", "keys/project.pub"},
		                 {"output_dir", "rec"},
		                 {"streams",
		                  {{{"stream_id", 0},
		                    {"kind", "audio"},
		                    {"label", "mic"},
		                    {"device_binding", "synthetic:sine440"},
		                    {"audio", {{"sample_rate_hz", 16000}, {"channels", 1}}}},
		                   {{"stream_id", 1},
		                    {"kind", "video"},
		                    {"label", "cam"},
		                    {"device_binding", "synthetic:testcard"},
		                    {"video", {{"width_px", 32}, {"height_px", 24}, {"fps", 10}}}}}}});
		write_json(dir / "script.json", script());
	}

	static json script()
	{
		return {{"steps",
		         {{{"at_s", 0}, {"do", "start"}, {"actor", "researcher"}, {"expect_error", "consent_incomplete"}},
		          {{"at_s", 0}, {"do", "consent"}, {"role", "participant"}, {"participant_code", "P"},
		           {"pis_version", "1"}},
		          {{"at_s", 0},
		           {"do", "consent"},
		           {"role", "witness"},
		           {"witness_code", "W"},
		           {"understood_pis", true},
		           {"questions_answered", true},
		           {"no_deception", true}},
		          {{"at_s", 0.5}, {"do", "start"}, {"actor", "researcher"}},
		          {{"at_s", 1.5}, {"do", "pause"}, {"actor", "witness"}},
		          {{"at_s", 2.0}, {"do", "resume"}, {"actor", "researcher"}},
		          {{"at_s", 3.0}, {"do", "stop"}, {"actor", "researcher"}}}}};
	}

	fs::path record()
	{
		auto r = cusco_cmd({"record", "--config", cfg.string(), "--script", (dir / "script.json").string(), "--json"});
		REQUIRE_MESSAGE(r.rc == 0, r.err);
		return container = r.j()["container"].get<std::string>();
	}
};

} // namespace

TEST_CASE("keygen writes a 0600 private key and verifies an empty container")
{
	TempDir t;
	auto r = cusco_cmd({"keygen", "--out-dir", (t / "k").string(), "--json"});
	REQUIRE(r.rc == 0);
	CHECK(r.err.find("WARNING") != std::string::npos);
	const fs::path priv = r.j()["private_key"].get<std::string>();
	const auto perms = fs::status(priv).permissions();
	CHECK((perms & (fs::perms::group_all | fs::perms::others_all)) == fs::perms::none);
	CHECK(crypto::is_private_key_file(priv));
	CHECK_FALSE(crypto::is_private_key_file(r.j()["public_key"].get<std::string>()));

	const auto pub = crypto::load_public_key(r.j()["public_key"].get<std::string>());
	auto w = container::ContainerWriter::create(t / "empty.rec", pub.key, {pub.project_id, Uuid::random(), 0, 0},
	                                            {test::audio_stream(0)});
	w.finalize();
	auto v = cusco_cmd({"verify", "--in", (t / "empty.rec").string(), "--key", priv.string(), "--json"});
	CHECK(v.rc == 0);
	CHECK(v.j()["clean"] == true);
	CHECK(v.j()["chunks_ok"] == 0);
}

TEST_CASE("record, verify, inspect, tamper")
{
	Project p;
	const auto rec = p.record();
	auto v = cusco_cmd({"verify", "--in", rec.string(), "--key", p.priv.string()});
	CHECK(v.rc == 0);
	CHECK(v.out.starts_with("OK"));

	auto ins = cusco_cmd({"inspect", "--in", rec.string(), "--key", p.priv.string(), "--json"});
	REQUIRE(ins.rc == 0);
	std::vector<std::string> actions;
	const auto info = ins.j();
	for (const auto &e : info["events"])
		actions.push_back(e["action"].get<std::string>());
	const std::vector<std::string> want = {"consent_participant", "consent_witness", "start", "pause", "resume",
	                                       "stop"};
	CHECK(actions == want);

	auto bytes = test::read_file(rec);
	const auto h = container::read_header(rec);
	// First record: 8 + 37 + 12 + 4 bytes of framing, then ciphertext.
	bytes[h.header_end + 61 + 10] ^= 0x01;
	const auto bad = p.dir / "bad.rec";
	test::write_file(bad, bytes);
	v = cusco_cmd({"verify", "--in", bad.string(), "--key", p.priv.string(), "--json"});
	CHECK(v.rc == 1);
	CHECK(v.j()["clean"] == false);
	CHECK(v.j()["tampered"] == json::array({0}));

	bytes = test::read_file(rec);
	bytes.resize(bytes.size() - 100);
	test::write_file(bad, bytes);
	v = cusco_cmd({"verify", "--in", bad.string(), "--key", p.priv.string(), "--json"});
	CHECK(v.rc == 1);
	CHECK_FALSE(v.j()["truncated_at"].is_null());
}

TEST_CASE("usage errors exit 2 with usage on stderr")
{
	auto r = cusco_cmd({"verify", "--bogus"});
	CHECK(r.rc == 2);
	CHECK(r.err.find("Usage") != std::string::npos);
	CHECK(cusco_cmd({}).rc == 2);
	CHECK(cusco_cmd({"frobnicate"}).rc == 2);
	CHECK(cusco_cmd({"verify", "--in", "/nonexistent.rec", "--key", "/nonexistent.key"}).rc == 2);
	CHECK(cusco_cmd({"features", "--out", "/tmp/x"}).rc == 2);
}

TEST_CASE("help lists every subcommand and matches the snapshot")
{
	auto r = cusco_cmd({"--help"});
	CHECK(r.rc == 0);
	for (const auto *sub : {"keygen", "probe", "status", "record", "verify", "inspect", "redact", "export", "features"})
		CHECK_MESSAGE(r.out.find(std::string("  ") + sub) != std::string::npos, sub);
	std::ifstream snap(CLI_HELP_SNAPSHOT);
	REQUIRE(snap);
	std::stringstream want;
	want << snap.rdbuf();
	CHECK(r.out == want.str());
}

TEST_CASE("record refuses when a private key sits on the device")
{
	Project p;
	fs::copy_file(p.priv, p.dir / "device/keys/project.key");
	auto r = cusco_cmd({"record", "--config", p.cfg.string(), "--script", (p.dir / "script.json").string()});
	CHECK(r.rc == 2);
	CHECK(r.err.find("private key") != std::string::npos);
	CHECK(fs::is_empty(p.dir / "device/rec"));
}

TEST_CASE("record fails when a step's outcome differs from the script")
{
	Project p;
	auto s = Project::script();
	s["steps"][0].erase("expect_error");
	write_json(p.dir / "script.json", s);
	auto r = cusco_cmd({"record", "--config", p.cfg.string(), "--script", (p.dir / "script.json").string()});
	CHECK(r.rc == 1);
	CHECK(r.err.find("consent_incomplete") != std::string::npos);

	s = Project::script();
	s["steps"][4]["expect_error"] = "illegal_transition";
	write_json(p.dir / "script.json", s);
	r = cusco_cmd({"record", "--config", p.cfg.string(), "--script", (p.dir / "script.json").string()});
	CHECK(r.rc == 1);
	CHECK(r.err.find("succeeded") != std::string::npos);
}

TEST_CASE("redact, export, features")
{
	Project p;
	const auto rec = p.record();
	const auto sid = container::read_header(rec).session.session_id.str();
	const auto list = p.dir / "list.json";
	write_json(list, {{"session_id", sid},
	                  {"entries",
	                   {{{"stream_id", 0}, {"t_start_s", 0.2}, {"t_end_s", 0.6}},
	                    {{"stream_id", 1}, {"t_start_s", 0.0}, {"t_end_s", 0.5}, {"region", {{"x", 0}, {"y", 0}, {"w", 16}, {"h", 12}}}}}}});
	const auto out = p.dir / "red.rec";
	auto r = cusco_cmd({"redact", "--in", rec.string(), "--key", p.priv.string(), "--list", list.string(), "--out",
	                    out.string(), "--json"});
	REQUIRE_MESSAGE(r.rc == 0, r.err);
	CHECK(r.j()["pass"] == true);

	r = cusco_cmd({"export", "--in", rec.string(), "--key", p.priv.string(), "--out-dir", (p.dir / "e0").string()});
	CHECK(r.rc == 1);
	CHECK_FALSE(fs::exists(p.dir / "e0/manifest.json"));
	r = cusco_cmd({"export", "--in", out.string(), "--key", p.priv.string(), "--out-dir", (p.dir / "e1").string(),
	               "--json"});
	REQUIRE_MESSAGE(r.rc == 0, r.err);
	CHECK(fs::exists(p.dir / "e1/manifest.json"));
	r = cusco_cmd({"export", "--in", rec.string(), "--key", p.priv.string(), "--out-dir", (p.dir / "e2").string(),
	               "--attest-no-redactions"});
	CHECK(r.rc == 0);

	r = cusco_cmd({"features", "--in", rec.string(), "--key", p.priv.string(), "--out", (p.dir / "f").string(),
	               "--json"});
	REQUIRE_MESSAGE(r.rc == 0, r.err);
	CHECK(fs::exists(p.dir / "f/features.ndjson"));
	// Three seconds of tiny video: the fixed per-window cost dominates, so
	// only a loose bound here. The acceptance run checks the real floor.
	CHECK(r.j()["feature_bytes"].get<double>() < 0.1 * r.j()["media_bytes"].get<double>());
	r = cusco_cmd({"features", "--config", p.cfg.string(), "--live-seconds", "0.5", "--out", (p.dir / "g").string()});
	CHECK(r.rc == 0);

	// A list for a different session is a config error.
	write_json(list, {{"session_id", Uuid::random().str()}, {"entries", json::array()}});
	r = cusco_cmd({"redact", "--in", rec.string(), "--key", p.priv.string(), "--list", list.string(), "--out",
	               (p.dir / "x.rec").string()});
	CHECK(r.rc == 2);
	CHECK_FALSE(fs::exists(p.dir / "x.rec"));
}

TEST_CASE("probe reports absent sources with exit 1")
{
	Project p;
	CHECK(cusco_cmd({"probe", "--config", p.cfg.string()}).rc == 0);
	auto j = json::parse(std::ifstream(p.cfg));
	j["streams"][0]["device_binding"] = "alsa:hw:9,9";
	write_json(p.cfg, j);
	auto r = cusco_cmd({"probe", "--config", p.cfg.string(), "--json"});
	CHECK(r.rc == 1);
	CHECK(r.j()["all_present"] == false);
}
