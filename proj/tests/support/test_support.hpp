#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "cusco/common.hpp"
#include "cusco/container.hpp"
#include "cusco/media.hpp"
#include "cusco/streams.hpp"

namespace cusco::test {

// Scratch directory removed on destruction.
class TempDir {
public:
	TempDir()
	{
		auto base = std::filesystem::temp_directory_path() / "cusco-test-XXXXXX";
		std::string tmpl = base.string();
		if (!::mkdtemp(tmpl.data()))
			throw std::runtime_error("mkdtemp failed");
		path_ = tmpl;
	}
	TempDir(const TempDir &) = delete;
	TempDir &operator=(const TempDir &) = delete;
	~TempDir()
	{
		std::error_code ec;
		std::filesystem::remove_all(path_, ec);
	}

	const std::filesystem::path &path() const { return path_; }
	std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

private:
	std::filesystem::path path_;
};

inline Bytes read_file(const std::filesystem::path &p)
{
	std::ifstream in(p, std::ios::binary);
	return Bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path &p, const Bytes &data)
{
	std::ofstream out(p, std::ios::binary | std::ios::trunc);
	out.write(reinterpret_cast<const char *>(data.data()), static_cast<std::streamsize>(data.size()));
}

inline Bytes random_bytes(std::mt19937_64 &rng, std::size_t n)
{
	Bytes b(n);
	for (auto &x : b)
		x = static_cast<std::uint8_t>(rng());
	return b;
}

inline StreamDescriptor audio_stream(std::uint32_t id, std::uint32_t rate = 16000,
                                     std::uint16_t channels = 1,
                                     std::string binding = "synthetic:sine440")
{
	StreamDescriptor d;
	d.stream_id = id;
	d.kind = StreamKind::audio;
	d.audio = AudioParams{rate, channels, "s16le", 20};
	d.label = "audio" + std::to_string(id);
	d.device_binding = std::move(binding);
	return d;
}

inline StreamDescriptor video_stream(std::uint32_t id, std::uint32_t w = 32, std::uint32_t h = 24,
                                     std::uint32_t fps = 10, std::string fmt = "gray8",
                                     std::string binding = "synthetic:testcard")
{
	StreamDescriptor d;
	d.stream_id = id;
	d.kind = StreamKind::video;
	d.video = VideoParams{w, h, fps, std::move(fmt)};
	d.label = "video" + std::to_string(id);
	d.device_binding = std::move(binding);
	return d;
}

inline StreamDescriptor meta_stream(std::uint32_t id)
{
	StreamDescriptor d;
	d.stream_id = id;
	d.kind = StreamKind::meta;
	d.label = "meta";
	d.device_binding = "session";
	return d;
}

// The recording setup of the reference deployment: two cameras, a table
// microphone and a microphone array.
inline std::vector<StreamDescriptor> reference_setup_streams()
{
	auto cam_a = video_stream(0, 32, 24, 10, "rgb24");
	cam_a.label = "camera_a";
	auto cam_b = video_stream(1, 32, 24, 10, "rgb24");
	cam_b.label = "camera_b";
	auto table = audio_stream(2, 16000, 1);
	table.label = "table_mic";
	auto array = audio_stream(3, 16000, 4, "synthetic:noise");
	array.label = "mic_array";
	return {cam_a, cam_b, table, array};
}

inline MediaFrame frame(std::uint32_t stream, std::uint64_t seq, std::int64_t t, Bytes payload)
{
	return MediaFrame{stream, seq, t, std::move(payload)};
}

// Writes `seconds` of every media stream straight through the container
// writer, one chunk per stream per second, frames from the synthetic sources.
inline container::ContainerHeader record_synthetic(const std::filesystem::path &path,
                                                   const crypto::PublicKey &recipient,
                                                   std::vector<StreamDescriptor> streams, int seconds,
                                                   std::int64_t origin_ns = 5 * kNsPerSec)
{
	container::SessionMeta meta{Uuid::random(), Uuid::random(), 1'700'000'000LL * kNsPerSec, origin_ns};
	container::WriterOptions opts;
	opts.sync_each_chunk = false;
	auto w = container::ContainerWriter::create(path, recipient, meta, streams, opts);
	std::vector<std::unique_ptr<streams::Source>> sources;
	for (const auto &d : streams)
		sources.push_back(is_media(d.kind) ? streams::make_source(d, 1) : nullptr);
	std::vector<std::uint64_t> seq(streams.size(), 0);
	for (int s = 0; s < seconds; ++s) {
		for (std::size_t i = 0; i < streams.size(); ++i) {
			if (!sources[i])
				continue;
			const auto period = frame_period_ns(streams[i]);
			std::vector<MediaFrame> batch;
			while (static_cast<std::int64_t>(seq[i]) * period < (s + 1) * kNsPerSec) {
				batch.push_back({streams[i].stream_id, seq[i], origin_ns + static_cast<std::int64_t>(seq[i]) * period,
				                 sources[i]->produce(seq[i])});
				seq[i]++;
			}
			w.append_chunk(streams[i].stream_id, batch);
		}
	}
	w.finalize();
	return w.header();
}

} // namespace cusco::test
