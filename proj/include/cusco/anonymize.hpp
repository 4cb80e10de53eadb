#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "cusco/crypto.hpp"
#include "cusco/media.hpp"
#include "cusco/streams.hpp"

// Content-free interaction features: windowed loudness and crossing rate,
// a coarse motion grid, and pause statistics. The floors below keep the
// features too coarse to rebuild speech or images from.
namespace cusco::anonymize {

inline constexpr std::uint32_t kMinWindowMs = 100;
inline constexpr int kMaxGrid = 8;
inline constexpr double kRmsFloorDb = -96.0;
inline constexpr std::string_view kSchema = "cusco.features/1";

struct AudioFeatureParams {
	std::uint32_t window_ms = 500;
	// A window is voiced when its level reaches this.
	double voiced_threshold_dbfs = -40.0;

	void validate() const;
};

// Values are quantized (0.01 dB, 0.1 crossings/s) before they leave the
// extractor, which is part of what makes the mapping many-to-one.
struct FeatureFrame {
	double t_start_s = 0;
	double t_end_s = 0;
	double rms_db = kRmsFloorDb;
	double zero_crossing_rate = 0;
	bool voiced = false;

	friend bool operator==(const FeatureFrame &, const FeatureFrame &) = default;
};

// Windows tile the input; a trailing partial window gets its own frame.
// The crossing rate is estimated from the ratio of first-difference energy
// to signal energy with the window treated as circular, which gives exactly
// 2f for a sine holding a whole number of periods and fs/2 for white noise.
std::vector<FeatureFrame> extract_audio_features(std::span<const float> pcm, std::uint32_t sample_rate_hz,
                                                 const AudioFeatureParams &params = {},
                                                 double t_offset_s = 0);

// Same computation fed incrementally, for live extraction.
class StreamingAudioFeatures {
public:
	StreamingAudioFeatures(std::uint32_t sample_rate_hz, AudioFeatureParams params = {}, double t_offset_s = 0);
	std::vector<FeatureFrame> push(std::span<const float> samples);
	std::vector<FeatureFrame> finish();

private:
	FeatureFrame window_frame(std::span<const float> w, std::uint64_t first_sample) const;

	std::uint32_t rate_;
	AudioFeatureParams params_;
	double t_offset_;
	std::size_t window_samples_;
	std::vector<float> buf_;
	std::uint64_t consumed_ = 0;
};

struct MotionFrame {
	double t_s = 0;
	// grid(r, c): mean |difference| over the cell, normalized to 0..1.
	Eigen::MatrixXf grid;
};

// Per-pixel intensity in 0..1 (rgb24 averaged over channels). Throws
// PreconditionError on a payload of the wrong size.
Eigen::ArrayXXf intensity(ByteView payload, const VideoParams &p);

// Mean |a - b| per grid cell. Rows and columns are split as evenly as
// integer division allows.
Eigen::MatrixXf motion_grid(const Eigen::ArrayXXf &a, const Eigen::ArrayXXf &b, int grid);

// Frame i against frame i-1. Needs at least two frames.
std::vector<MotionFrame> extract_motion_features(std::span<const MediaFrame> frames, const VideoParams &p,
                                                 int grid = 4, std::int64_t time_origin_ns = 0);

struct PauseStats {
	std::size_t pause_count = 0;
	double mean_pause_s = 0;
	double median_pause_s = 0;
	double total_pause_ratio = 0;
	double speech_ratio = 0;
	std::vector<streams::Segment> pauses;
};

// Pauses are the complement of speech within [0, span], leading and trailing
// silence included. Segments must be sorted, disjoint and inside the span.
PauseStats pause_statistics(std::span<const streams::Segment> speech, double session_span_s);

// NDJSON records. Audio frames of one contiguous run go into a single
// columnar record so the per-window cost is a few bytes.
nlohmann::json audio_record(std::span<const FeatureFrame> frames, std::uint32_t stream_id);
nlohmann::json to_json(const MotionFrame &f, std::uint32_t stream_id);
nlohmann::json to_json(const PauseStats &s, std::uint32_t stream_id);

struct ExtractOptions {
	AudioFeatureParams audio;
	int grid = 4;
	streams::VadParams vad{30, -40.0, 10};
};

struct ExtractSummary {
	std::uint64_t media_bytes = 0;
	std::uint64_t feature_bytes = 0;
	std::size_t audio_frames = 0;
	std::size_t motion_frames = 0;
};

// Decrypts a container and writes one NDJSON document: a header record, then
// audio, motion and pause records per stream. Times are seconds from the
// session's time origin.
ExtractSummary extract_container_features(const std::filesystem::path &container, const crypto::SecretKey &priv,
                                          std::ostream &out, const ExtractOptions &opts = {});

// The same extraction fed straight from the configured sources for `seconds`:
// media is held in memory only and never written. session_id is "live".
ExtractSummary extract_live_features(const std::vector<StreamDescriptor> &streams, double seconds,
                                     std::ostream &out, const ExtractOptions &opts = {}, std::uint64_t seed = 0);

} // namespace cusco::anonymize
