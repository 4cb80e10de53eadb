#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cusco/common.hpp"

namespace cusco {

enum class StreamKind : std::uint8_t {
	audio = 1,
	video = 2,
	depth = 3,
	vad_events = 4,
	meta = 5,
};

std::string_view to_string(StreamKind kind);
StreamKind stream_kind_from_string(std::string_view name);

inline bool is_media(StreamKind k)
{
	return k == StreamKind::audio || k == StreamKind::video || k == StreamKind::depth;
}

struct AudioParams {
	std::uint32_t sample_rate_hz = 16000;
	std::uint16_t channels = 1;
	std::string sample_format = "s16le";
	// Samples are delivered in blocks of this duration.
	std::uint32_t block_ms = 20;

	friend bool operator==(const AudioParams &, const AudioParams &) = default;
};

struct VideoParams {
	std::uint32_t width_px = 0;
	std::uint32_t height_px = 0;
	std::uint32_t fps = 0;
	// gray8 | rgb24 for video, gray16le for depth.
	std::string pixel_format = "gray8";

	friend bool operator==(const VideoParams &, const VideoParams &) = default;
};

struct StreamDescriptor {
	std::uint32_t stream_id = 0;
	StreamKind kind = StreamKind::audio;
	std::optional<AudioParams> audio;
	std::optional<VideoParams> video;
	std::string label;
	// "synthetic:<generator>", "device:<path>", "vad:<audio stream id>" or "session".
	std::string device_binding;

	friend bool operator==(const StreamDescriptor &, const StreamDescriptor &) = default;
};

// Throws ConfigError naming the offending field.
void validate(const StreamDescriptor &desc);

// Checks each descriptor plus id uniqueness and density (0..n-1).
void validate_stream_table(const std::vector<StreamDescriptor> &streams);

std::size_t bytes_per_sample(const AudioParams &a);
std::size_t bytes_per_pixel(const VideoParams &v);

// Expected payload size of one frame; 0 for variable-size kinds (meta, vad).
std::size_t frame_payload_bytes(const StreamDescriptor &desc);

// Nominal interval between frames; 0 for event-driven kinds.
std::int64_t frame_period_ns(const StreamDescriptor &desc);

std::size_t samples_per_block(const AudioParams &a);

struct MediaFrame {
	std::uint32_t stream_id = 0;
	std::uint64_t seq = 0;
	std::int64_t t_capture_ns = 0;
	Bytes payload;

	friend bool operator==(const MediaFrame &, const MediaFrame &) = default;
};

void to_json(nlohmann::json &j, const StreamDescriptor &d);
void from_json(const nlohmann::json &j, StreamDescriptor &d);

} // namespace cusco
