#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>

#include "cusco/redact.hpp"
#include "support/test_support.hpp"

using namespace cusco;
using namespace cusco::redact;
using cusco::test::TempDir;
namespace fs = std::filesystem;

namespace {

struct Keys {
	crypto::ProjectKeypair kp = crypto::generate_project_keys(Uuid::random(), 1);
	const crypto::SecretKey &priv() const { return kp.private_unwrap_key; }
	const crypto::PublicKey &pub() const { return kp.public_wrap_key; }
};

// Audio 0 (sine, 16 kHz), video 1 (gray8 testcard 32x24 at 10 fps), 4 s.
std::vector<StreamDescriptor> small_setup()
{
	return {test::audio_stream(0), test::video_stream(1)};
}

std::map<std::uint32_t, std::vector<MediaFrame>> frames_by_stream(const fs::path &p, const crypto::SecretKey &k)
{
	std::map<std::uint32_t, std::vector<MediaFrame>> out;
	for (auto &c : container::ContainerReader::open(p, k).read_all())
		for (auto &f : c.frames)
			out[c.record.stream_id].push_back(f);
	return out;
}

// Copies a container chunk by chunk, letting `mutate` edit frames on the way.
void rewrite(const fs::path &in, const fs::path &out, const Keys &keys,
             const std::function<void(std::uint32_t, MediaFrame &)> &mutate)
{
	auto r = container::ContainerReader::open(in, keys.priv());
	container::WriterOptions o;
	o.sync_each_chunk = false;
	auto w = container::ContainerWriter::create(out, keys.pub(), r.header().session, r.header().stream_table, o);
	while (auto c = r.next()) {
		for (auto &f : c->frames)
			mutate(c->record.stream_id, f);
		w.append_chunk(c->record.stream_id, c->frames);
	}
	w.finalize();
}

RedactOptions fast()
{
	RedactOptions o;
	o.sync_each_chunk = false;
	return o;
}

double rel(const MediaFrame &f, const container::ContainerHeader &h)
{
	return static_cast<double>(f.t_capture_ns - h.session.time_origin_ns) / 1e9;
}

// Nested-loop box blur with clamped coordinates, written independently of the
// summed-area implementation.
std::vector<std::uint32_t> naive_blur(const std::vector<std::uint32_t> &p, int w, int h, int k)
{
	std::vector<std::uint32_t> out(p.size());
	const int r = k / 2;
	for (int y = 0; y < h; ++y)
		for (int x = 0; x < w; ++x) {
			std::uint64_t s = 0;
			for (int dy = -r; dy <= r; ++dy)
				for (int dx = -r; dx <= r; ++dx) {
					const int sx = std::min(std::max(x + dx, 0), w - 1);
					const int sy = std::min(std::max(y + dy, 0), h - 1);
					s += p[static_cast<std::size_t>(sy * w + sx)];
				}
			const std::uint64_t a = static_cast<std::uint64_t>(k) * k;
			out[static_cast<std::size_t>(y * w + x)] = static_cast<std::uint32_t>((s + a / 2) / a);
		}
	return out;
}

std::uint32_t le32(const std::uint8_t *p)
{
	return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24);
}

double rms_dbfs(const std::vector<double> &x)
{
	double e = 0;
	for (double v : x)
		e += v * v;
	const double r = std::sqrt(e / static_cast<double>(x.size()));
	return r > 0 ? 20 * std::log10(r) : -1e9;
}

} // namespace

TEST_CASE("summed-area blur matches the nested-loop oracle")
{
	std::mt19937_64 rng(3);
	for (int trial = 0; trial < 40; ++trial) {
		const int w = 1 + static_cast<int>(rng() % 40), h = 1 + static_cast<int>(rng() % 30);
		const int k = 3 + 2 * static_cast<int>(rng() % 8);
		const std::uint32_t range = trial % 2 ? 65536 : 256;
		std::vector<std::uint32_t> p(static_cast<std::size_t>(w * h));
		for (auto &v : p)
			v = static_cast<std::uint32_t>(rng() % range);
		CHECK(box_blur(p, static_cast<std::uint32_t>(w), static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(k)) ==
		      naive_blur(p, w, h, k));
	}
}

TEST_CASE("uniform plane is a fixed point of the blur")
{
	std::vector<std::uint32_t> p(20 * 10, 77);
	CHECK(box_blur(p, 20, 10, 15) == p);
}

TEST_CASE("blur_regions only touches the region, per channel")
{
	VideoParams p{16, 12, 10, "rgb24"};
	std::mt19937_64 rng(9);
	auto orig = test::random_bytes(rng, 16 * 12 * 3);
	auto b = orig;
	Rect r{3, 2, 5, 4};
	blur_regions(b, p, std::span(&r, 1), 5);
	for (int c = 0; c < 3; ++c) {
		std::vector<std::uint32_t> plane(16 * 12);
		for (std::size_t i = 0; i < plane.size(); ++i)
			plane[i] = orig[3 * i + static_cast<std::size_t>(c)];
		const auto want = naive_blur(plane, 16, 12, 5);
		for (std::uint32_t y = 0; y < 12; ++y)
			for (std::uint32_t x = 0; x < 16; ++x) {
				const auto i = std::size_t(y) * 16 + x;
				const auto got = b[3 * i + static_cast<std::size_t>(c)];
				if (r.contains(x, y))
					CHECK(got == want[i]);
				else
					CHECK(got == orig[3 * i + static_cast<std::size_t>(c)]);
			}
	}
}

TEST_CASE("smoothness bound holds for random images")
{
	std::mt19937_64 rng(11);
	VideoParams p{40, 30, 10, "gray8"};
	for (std::uint32_t k : {3u, 7u, 15u}) {
		for (int t = 0; t < 20; ++t) {
			auto b = test::random_bytes(rng, 40 * 30);
			// Worst case for the bound: hard black/white columns.
			if (t % 2)
				for (std::size_t i = 0; i < b.size(); ++i)
					b[i] = (i % 40) % 2 ? 255 : 0;
			Rect all{0, 0, 40, 30};
			blur_regions(b, p, std::span(&all, 1), k);
			CHECK(max_neighbour_diff(b, p, all) <= smoothness_bound(p, k));
		}
	}
	CHECK(smoothness_bound(p, 15) == 18);
	CHECK(smoothness_bound(VideoParams{4, 4, 10, "gray16le"}, 15) == 4370);
}

TEST_CASE("silence gain: edges, ramps and overlaps")
{
	std::vector<RedactionEntry> e{{0, 1.0, 2.0, {}}};
	CHECK(silence_gain(e, 0.999, 0.01) == 1.0);
	CHECK(silence_gain(e, 2.0, 0.01) == 1.0);
	CHECK(silence_gain(e, 1.0, 0.01) == doctest::Approx(1.0));
	CHECK(silence_gain(e, 1.005, 0.01) == doctest::Approx(0.5));
	CHECK(silence_gain(e, 1.5, 0.01) == 0.0);
	CHECK(silence_gain(e, 1.995, 0.01) == doctest::Approx(0.5));
	CHECK(silence_gain(e, 1.5, 0.0) == 0.0);
	e.push_back({0, 1.5, 3.0, {}});
	CHECK(silence_gain(e, 1.995, 0.01) == 0.0);
	CHECK(silence_gain(e, 2.5, 0.01) == 0.0);
}

TEST_CASE("redaction list parsing and validation")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "a.cusco", keys.pub(), small_setup(), 1);
	const auto sid = h.session.session_id;

	auto good = RedactionList::from_json(nlohmann::json::parse(
	    R"({"session_id":")" + sid.str() +
	    R"(","entries":[{"stream_id":0,"t_start_s":0.1,"t_end_s":0.2},
	       {"stream_id":1,"t_start_s":0,"t_end_s":1,"region":{"x":0,"y":0,"w":32,"h":24}}]})"));
	CHECK_NOTHROW(validate(good, h));
	CHECK(RedactionList::from_json(good.to_json()).entries == good.entries);

	auto bad = [&](RedactionEntry e) {
		RedactionList l{sid, {e}};
		CHECK_THROWS_AS(validate(l, h), ConfigError);
	};
	bad({7, 0, 1, {}});
	bad({0, 1, 1, {}});
	bad({0, 0, 1, Rect{0, 0, 1, 1}});
	bad({1, 0, 1, {}});
	bad({1, 0, 1, Rect{30, 0, 3, 1}});
	bad({1, 0, 1, Rect{0, 20, 1, 5}});
	bad({1, 0, 1, Rect{0, 0, 0, 5}});
	RedactionList other{Uuid::random(), {}};
	CHECK_THROWS_AS(validate(other, h), ConfigError);
	CHECK_THROWS_AS(RedactionList::from_json(nlohmann::json::parse(R"({"entries":[]})")), ConfigError);
	CHECK_THROWS_AS(RedactionList::from_json(nlohmann::json::parse(R"({"session_id":"x","entries":[]})")), ConfigError);
}

TEST_CASE("empty list leaves every payload unchanged")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 3);
	auto rep = apply_redactions(dir / "in.cusco", keys.priv(), RedactionList{h.session.session_id, {}},
	                            dir / "out.cusco", keys.pub(), fast());
	CHECK(rep.pass());
	auto a = frames_by_stream(dir / "in.cusco", keys.priv());
	auto b = frames_by_stream(dir / "out.cusco", keys.priv());
	CHECK(a[0] == b[0]);
	CHECK(a[1] == b[1]);
	// Chunk boundaries are kept.
	auto ca = container::ContainerReader::open(dir / "in.cusco", keys.priv()).read_all();
	auto cb = container::ContainerReader::open(dir / "out.cusco", keys.priv()).read_all();
	REQUIRE(cb.size() == ca.size());
	for (std::size_t i = 0; i < ca.size(); ++i)
		CHECK(ca[i].frames.size() == cb[i].frames.size());
}

TEST_CASE("audio silenced inside the interval, untouched outside")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 3);
	RedactionList l{h.session.session_id, {{0, 1.0, 2.0, {}}}};
	auto rep = apply_redactions(dir / "in.cusco", keys.priv(), l, dir / "out.cusco", keys.pub(), fast());
	REQUIRE(rep.entries.size() == 1);
	CHECK(rep.entries[0].applied);
	CHECK(rep.entries[0].verified);
	CHECK(rep.pass());

	auto a = frames_by_stream(dir / "in.cusco", keys.priv())[0];
	auto b = frames_by_stream(dir / "out.cusco", keys.priv())[0];
	REQUIRE(a.size() == b.size());
	std::vector<double> inside;
	std::size_t outside = 0;
	for (std::size_t i = 0; i < a.size(); ++i) {
		const auto x = streams::s16le_to_float(a[i].payload);
		const auto y = streams::s16le_to_float(b[i].payload);
		for (std::size_t s = 0; s < x.size(); ++s) {
			const double t = rel(a[i], h) + static_cast<double>(s) / 16000;
			if (t >= 1.01 && t < 1.99)
				inside.push_back(y[s]);
			if (t < 0.99 || t >= 2.01) {
				CHECK(x[s] == y[s]);
				outside++;
			}
		}
	}
	CHECK(inside.size() == 15680);
	CHECK(rms_dbfs(inside) <= -96.0);
	CHECK(outside > 30000);
	CHECK(*rep.entries[0].metric <= -96.0);
}

TEST_CASE("video region blurred during the interval only")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 3);
	const Rect r{4, 4, 16, 12};
	RedactionList l{h.session.session_id, {{1, 1.0, 2.0, r}}};
	auto rep = apply_redactions(dir / "in.cusco", keys.priv(), l, dir / "out.cusco", keys.pub(), fast());
	CHECK(rep.pass());
	auto a = frames_by_stream(dir / "in.cusco", keys.priv())[1];
	auto b = frames_by_stream(dir / "out.cusco", keys.priv())[1];
	REQUIRE(a.size() == 30);
	const VideoParams p{32, 24, 10, "gray8"};
	int blurred = 0;
	for (std::size_t i = 0; i < a.size(); ++i) {
		const double t = rel(a[i], h);
		if (t >= 1.0 && t < 2.0) {
			std::vector<std::uint32_t> plane(a[i].payload.begin(), a[i].payload.end());
			const auto want = naive_blur(plane, 32, 24, 15);
			for (std::uint32_t y = 0; y < 24; ++y)
				for (std::uint32_t x = 0; x < 32; ++x) {
					const auto k = std::size_t(y) * 32 + x;
					CHECK(b[i].payload[k] == (r.contains(x, y) ? want[k] : a[i].payload[k]));
				}
			CHECK(max_neighbour_diff(b[i].payload, p, r) <= smoothness_bound(p, 15));
			blurred++;
		} else {
			CHECK(a[i].payload == b[i].payload);
		}
	}
	CHECK(blurred == 10);
}

TEST_CASE("unredacted container fails every entry")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 3);
	RedactionList l{h.session.session_id, {{0, 0.5, 1.5, {}}, {1, 1.0, 2.0, Rect{0, 0, 32, 24}}, {0, 2.0, 2.5, {}}}};
	auto rep = verify_redactions(dir / "in.cusco", keys.priv(), l, fast());
	REQUIRE(rep.entries.size() == 3);
	for (const auto &e : rep.entries) {
		CHECK_FALSE(e.verified);
		CHECK(e.metric.has_value());
	}
	CHECK(*rep.entries[0].metric == doctest::Approx(-9.03).epsilon(0.01));
	CHECK(*rep.entries[1].metric > 18);
	CHECK_FALSE(rep.pass());
}

TEST_CASE("reverting one frame fails exactly that entry")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 3);
	RedactionList l{h.session.session_id,
	                {{1, 0.5, 1.0, Rect{0, 0, 16, 12}}, {1, 2.0, 2.5, Rect{8, 8, 16, 12}}, {0, 1.0, 2.0, {}}}};
	REQUIRE(apply_redactions(dir / "in.cusco", keys.priv(), l, dir / "red.cusco", keys.pub(), fast()).pass());

	auto orig = frames_by_stream(dir / "in.cusco", keys.priv())[1];
	rewrite(dir / "red.cusco", dir / "bad.cusco", keys, [&](std::uint32_t sid, MediaFrame &f) {
		if (sid == 1 && rel(f, h) == doctest::Approx(2.2))
			f.payload = orig[f.seq].payload;
	});
	auto rep = verify_redactions(dir / "bad.cusco", keys.priv(), l, fast());
	CHECK(rep.entries[0].verified);
	CHECK_FALSE(rep.entries[1].verified);
	CHECK(rep.entries[2].verified);

	// And one audio sample.
	rewrite(dir / "red.cusco", dir / "bad2.cusco", keys, [&](std::uint32_t sid, MediaFrame &f) {
		if (sid == 0 && rel(f, h) == doctest::Approx(1.5)) {
			f.payload[0] = 0xFF;
			f.payload[1] = 0x3F;
		}
	});
	rep = verify_redactions(dir / "bad2.cusco", keys.priv(), l, fast());
	CHECK(rep.entries[0].verified);
	CHECK(rep.entries[1].verified);
	CHECK_FALSE(rep.entries[2].verified);
}

TEST_CASE("applying the same list twice changes no media")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 3);
	RedactionList l{h.session.session_id, {{0, 0.3, 0.9, {}}, {1, 1.0, 2.0, Rect{2, 2, 20, 10}}}};
	REQUIRE(apply_redactions(dir / "in.cusco", keys.priv(), l, dir / "once.cusco", keys.pub(), fast()).pass());
	auto rep = apply_redactions(dir / "once.cusco", keys.priv(), l, dir / "twice.cusco", keys.pub(), fast());
	CHECK(rep.pass());
	CHECK(rep.entries[0].detail.starts_with("already applied"));
	auto a = frames_by_stream(dir / "once.cusco", keys.priv());
	auto b = frames_by_stream(dir / "twice.cusco", keys.priv());
	CHECK(a[0] == b[0]);
	CHECK(a[1] == b[1]);
	CHECK(attached_list(dir / "twice.cusco", keys.priv()).entries == l.entries);
	CHECK(b.count(2) == 1);
}

TEST_CASE("property: samples and pixels outside every entry are untouched")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 2);
	auto a = frames_by_stream(dir / "in.cusco", keys.priv());
	std::mt19937_64 rng(21);
	std::uniform_real_distribution<double> t(0.0, 2.0);
	for (int trial = 0; trial < 8; ++trial) {
		RedactionList l{h.session.session_id, {}};
		const int n = 1 + static_cast<int>(rng() % 4);
		for (int i = 0; i < n; ++i) {
			double t0 = t(rng), t1 = t(rng);
			if (t0 > t1)
				std::swap(t0, t1);
			if (t1 - t0 < 0.05)
				t1 = t0 + 0.05;
			if (rng() % 2) {
				l.entries.push_back({0, t0, t1, {}});
			} else {
				const auto x = static_cast<std::uint32_t>(rng() % 30), y = static_cast<std::uint32_t>(rng() % 22);
				l.entries.push_back({1, t0, t1, Rect{x, y, 1 + static_cast<std::uint32_t>(rng() % (32 - x)),
				                                      1 + static_cast<std::uint32_t>(rng() % (24 - y))}});
			}
		}
		const auto out = dir / ("p" + std::to_string(trial) + ".cusco");
		auto rep = apply_redactions(dir / "in.cusco", keys.priv(), l, out, keys.pub(), fast());
		CHECK(rep.pass());
		auto b = frames_by_stream(out, keys.priv());
		for (std::size_t i = 0; i < a[0].size(); ++i) {
			const auto x = streams::s16le_to_float(a[0][i].payload);
			const auto y = streams::s16le_to_float(b[0][i].payload);
			for (std::size_t s = 0; s < x.size(); ++s) {
				const double ts = rel(a[0][i], h) + static_cast<double>(s) / 16000;
				bool covered = false;
				for (const auto &e : l.entries)
					covered |= e.stream_id == 0 && e.covers(ts);
				if (!covered)
					REQUIRE(x[s] == y[s]);
			}
		}
		for (std::size_t i = 0; i < a[1].size(); ++i) {
			const double tf = rel(a[1][i], h);
			for (std::uint32_t py = 0; py < 24; ++py)
				for (std::uint32_t px = 0; px < 32; ++px) {
					bool covered = false;
					for (const auto &e : l.entries)
						covered |= e.stream_id == 1 && e.covers(tf) && e.region->contains(px, py);
					const auto k = std::size_t(py) * 32 + px;
					if (!covered)
						REQUIRE(a[1][i].payload[k] == b[1][i].payload[k]);
				}
		}
	}
}

TEST_CASE("bad region fails before anything is written; wrong key is a KeyError")
{
	TempDir dir;
	Keys keys, other;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 1);
	RedactionList l{h.session.session_id, {{1, 0, 1, Rect{20, 0, 20, 5}}}};
	CHECK_THROWS_AS(apply_redactions(dir / "in.cusco", keys.priv(), l, dir / "out.cusco", keys.pub(), fast()),
	                ConfigError);
	CHECK_FALSE(fs::exists(dir / "out.cusco"));
	RedactionList ok{h.session.session_id, {}};
	CHECK_THROWS_AS(apply_redactions(dir / "in.cusco", other.priv(), ok, dir / "out.cusco", keys.pub(), fast()),
	                KeyError);
	CHECK_FALSE(fs::exists(dir / "out.cusco"));
	CHECK_THROWS_AS(verify_redactions(dir / "in.cusco", other.priv(), ok), KeyError);
}

TEST_CASE("export is refused unless verification passed")
{
	TempDir dir;
	Keys keys;
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 2);

	// No list attached and no attestation.
	CHECK_THROWS_AS(export_plain(dir / "in.cusco", keys.priv(), dir / "x1", false, fast()), PreconditionError);
	CHECK_FALSE(fs::exists(dir / "x1"));

	// A logged entry whose media was reverted afterwards.
	RedactionList l{h.session.session_id, {{0, 0.5, 1.5, {}}}};
	REQUIRE(apply_redactions(dir / "in.cusco", keys.priv(), l, dir / "red.cusco", keys.pub(), fast()).pass());
	auto orig = frames_by_stream(dir / "in.cusco", keys.priv())[0];
	rewrite(dir / "red.cusco", dir / "bad.cusco", keys, [&](std::uint32_t sid, MediaFrame &f) {
		if (sid == 0)
			f.payload = orig[f.seq].payload;
	});
	auto v = verify_for_export(dir / "bad.cusco", keys.priv(), false, fast());
	CHECK_FALSE(v.pass());
	CHECK_THROWS_AS(export_plain(v, keys.priv(), dir / "x2"), PreconditionError);
	CHECK_FALSE(fs::exists(dir / "x2"));

	// Verified, then the file changes underneath.
	fs::copy_file(dir / "red.cusco", dir / "copy.cusco");
	auto good = verify_for_export(dir / "copy.cusco", keys.priv(), false, fast());
	CHECK(good.pass());
	{
		std::ofstream app(dir / "copy.cusco", std::ios::binary | std::ios::app);
		app << "x";
	}
	CHECK_THROWS_AS(export_plain(good, keys.priv(), dir / "x3"), PreconditionError);
	CHECK_FALSE(fs::exists(dir / "x3"));
}

TEST_CASE("export writes files whose hashes match the manifest")
{
	TempDir dir;
	Keys keys;
	auto streams = small_setup();
	streams.push_back(test::video_stream(2, 8, 6, 5, "rgb24"));
	const auto h = test::record_synthetic(dir / "in.cusco", keys.pub(), streams, 3);
	RedactionList l{h.session.session_id, {{0, 0.5, 1.5, {}}}};
	REQUIRE(apply_redactions(dir / "in.cusco", keys.priv(), l, dir / "red.cusco", keys.pub(), fast()).pass());
	auto res = export_plain(dir / "red.cusco", keys.priv(), dir / "out", false, fast());

	auto manifest = nlohmann::json::parse(test::read_file(res.manifest));
	CHECK(manifest["session_id"] == h.session.session_id.str());
	CHECK(manifest["verification"]["pass"] == true);
	REQUIRE(manifest["files"].size() == res.files.size());
	for (const auto &f : manifest["files"]) {
		const auto data = test::read_file(dir / "out" / f["name"].get<std::string>());
		CHECK(crypto::sha256_hex(data) == f["sha256"].get<std::string>());
		CHECK(data.size() == f["bytes"].get<std::uint64_t>());
	}

	// WAV: 44-byte header, duration within one chunk of the recording.
	const auto wav = test::read_file(dir / "out" / "stream0_audio0.wav");
	REQUIRE(wav.size() > 44);
	CHECK(std::string(wav.begin(), wav.begin() + 4) == "RIFF");
	CHECK(le32(wav.data() + 24) == 16000);
	const double secs = static_cast<double>(le32(wav.data() + 40)) / (16000 * 2);
	CHECK(std::abs(secs - 3.0) <= 1.0);

	// rgb24 goes out planar: the second plane is 255 - first for the testcard.
	const auto raw = test::read_file(dir / "out" / "stream2_video2.raw");
	REQUIRE(raw.size() == 15u * 8 * 6 * 3);
	for (std::size_t i = 0; i < 48; ++i)
		CHECK(raw[48 + i] == 255 - raw[i]);
	auto side = nlohmann::json::parse(test::read_file(dir / "out" / "stream2_video2.json"));
	CHECK(side["layout"] == "planar");
	CHECK(side["frames"].size() == 15);

	// The meta stream was added by apply and holds the log.
	const auto meta = test::read_file(dir / "out" / "stream3_meta.jsonl");
	CHECK(std::string(meta.begin(), meta.end()).find("\"redaction\"") != std::string::npos);
}

TEST_CASE("attested export of a container with no redactions")
{
	TempDir dir;
	Keys keys;
	test::record_synthetic(dir / "in.cusco", keys.pub(), small_setup(), 1);
	auto res = export_plain(dir / "in.cusco", keys.priv(), dir / "out", true, fast());
	auto manifest = nlohmann::json::parse(test::read_file(res.manifest));
	CHECK(manifest["verification"]["attested_no_redactions"] == true);
	CHECK(res.files.size() == 3);
}
