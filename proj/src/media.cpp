#include "cusco/media.hpp"

#include <set>

#include <json.hpp>

namespace cusco {

std::string_view to_string(StreamKind kind)
{
	switch (kind) {
	case StreamKind::audio:
		return "audio";
	case StreamKind::video:
		return "video";
	case StreamKind::depth:
		return "depth";
	case StreamKind::vad_events:
		return "vad_events";
	case StreamKind::meta:
		return "meta";
	}
	return "unknown";
}

StreamKind stream_kind_from_string(std::string_view name)
{
	for (auto k : {StreamKind::audio, StreamKind::video, StreamKind::depth, StreamKind::vad_events,
	               StreamKind::meta})
		if (to_string(k) == name)
			return k;
	throw ConfigError("unknown stream kind '" + std::string(name) + "'");
}

void validate(const StreamDescriptor &d)
{
	const std::string where = "stream " + std::to_string(d.stream_id);
	const bool wants_audio = d.kind == StreamKind::audio;
	const bool wants_video = d.kind == StreamKind::video || d.kind == StreamKind::depth;

	if (wants_audio != d.audio.has_value())
		throw ConfigError(where + ": audio parameters must be present iff kind is audio");
	if (wants_video != d.video.has_value())
		throw ConfigError(where + ": video parameters must be present iff kind is video or depth");
	if (d.label.size() > 64)
		throw ConfigError(where + ": label longer than 64 characters");

	if (d.audio) {
		const auto &a = *d.audio;
		if (a.sample_rate_hz == 0)
			throw ConfigError(where + ": audio.sample_rate_hz must be > 0");
		if (a.channels == 0)
			throw ConfigError(where + ": audio.channels must be > 0");
		if (a.sample_format != "s16le")
			throw ConfigError(where + ": audio.sample_format must be s16le");
		if (a.block_ms == 0 || a.block_ms > 1000 || (a.sample_rate_hz * a.block_ms) % 1000 != 0)
			throw ConfigError(where +
			                  ": audio.block_ms must be in 1..1000 and give a whole number of samples");
	}
	if (d.video) {
		const auto &v = *d.video;
		if (v.width_px == 0 || v.height_px == 0)
			throw ConfigError(where + ": video.width_px and video.height_px must be > 0");
		if (v.fps == 0)
			throw ConfigError(where + ": video.fps must be > 0");
		if (d.kind == StreamKind::depth && v.pixel_format != "gray16le")
			throw ConfigError(where + ": depth streams use pixel_format gray16le");
		if (d.kind == StreamKind::video && v.pixel_format != "gray8" && v.pixel_format != "rgb24")
			throw ConfigError(where + ": video.pixel_format must be gray8 or rgb24");
	}
}

void validate_stream_table(const std::vector<StreamDescriptor> &streams)
{
	if (streams.empty())
		throw ConfigError("at least one stream descriptor is required");
	std::set<std::uint32_t> ids;
	for (const auto &d : streams) {
		validate(d);
		if (!ids.insert(d.stream_id).second)
			throw ConfigError("duplicate stream id " + std::to_string(d.stream_id));
	}
	if (*ids.rbegin() != streams.size() - 1)
		throw ConfigError("stream ids must be dense (0..n-1)");
}

std::size_t bytes_per_sample(const AudioParams &) { return 2; }

std::size_t bytes_per_pixel(const VideoParams &v)
{
	if (v.pixel_format == "rgb24")
		return 3;
	if (v.pixel_format == "gray16le")
		return 2;
	return 1;
}

std::size_t samples_per_block(const AudioParams &a)
{
	return static_cast<std::size_t>(a.sample_rate_hz) * a.block_ms / 1000;
}

std::size_t frame_payload_bytes(const StreamDescriptor &d)
{
	if (d.audio)
		return samples_per_block(*d.audio) * d.audio->channels * bytes_per_sample(*d.audio);
	if (d.video)
		return std::size_t{d.video->width_px} * d.video->height_px * bytes_per_pixel(*d.video);
	return 0;
}

std::int64_t frame_period_ns(const StreamDescriptor &d)
{
	if (d.audio)
		return std::int64_t{d.audio->block_ms} * kNsPerMs;
	if (d.video)
		return kNsPerSec / d.video->fps;
	return 0;
}

void to_json(nlohmann::json &j, const StreamDescriptor &d)
{
	j = nlohmann::json{
	    {"stream_id", d.stream_id},
	    {"kind", std::string(to_string(d.kind))},
	    {"label", d.label},
	    {"device_binding", d.device_binding},
	};
	if (d.audio)
		j["audio"] = {{"sample_rate_hz", d.audio->sample_rate_hz},
		              {"channels", d.audio->channels},
		              {"sample_format", d.audio->sample_format},
		              {"block_ms", d.audio->block_ms}};
	if (d.video)
		j["video"] = {{"width_px", d.video->width_px},
		              {"height_px", d.video->height_px},
		              {"fps", d.video->fps},
		              {"pixel_format", d.video->pixel_format}};
}

void from_json(const nlohmann::json &j, StreamDescriptor &d)
{
	d.stream_id = j.at("stream_id").get<std::uint32_t>();
	d.kind = stream_kind_from_string(j.at("kind").get<std::string>());
	d.label = j.value("label", "");
	d.device_binding = j.value("device_binding", "");
	d.audio.reset();
	d.video.reset();
	if (j.contains("audio")) {
		const auto &a = j.at("audio");
		AudioParams p;
		p.sample_rate_hz = a.at("sample_rate_hz").get<std::uint32_t>();
		p.channels = a.value("channels", std::uint16_t{1});
		p.sample_format = a.value("sample_format", std::string("s16le"));
		p.block_ms = a.value("block_ms", std::uint32_t{20});
		d.audio = p;
	}
	if (j.contains("video")) {
		const auto &v = j.at("video");
		VideoParams p;
		p.width_px = v.at("width_px").get<std::uint32_t>();
		p.height_px = v.at("height_px").get<std::uint32_t>();
		p.fps = v.at("fps").get<std::uint32_t>();
		p.pixel_format = v.value("pixel_format",
		                         std::string(d.kind == StreamKind::depth ? "gray16le" : "gray8"));
		d.video = p;
	}
}

} // namespace cusco
