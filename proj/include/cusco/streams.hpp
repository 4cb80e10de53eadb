#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stop_token>
#include <string>
#include <vector>

#include "cusco/common.hpp"
#include "cusco/media.hpp"

namespace cusco::streams {

enum class SourceState { present, absent, error };

std::string_view to_string(SourceState s);

struct SourceStatus {
	std::uint32_t stream_id = 0;
	SourceState state = SourceState::absent;
	std::string detail;
	std::optional<std::int64_t> last_frame_at_ns;
};

// Thrown by Source::produce when the device disappears mid-run.
class SourceFailure : public Error {
public:
	using Error::Error;
};

// Parsed device binding: "synthetic:sine440?amp=0.5&fail_after=10".
struct Binding {
	std::string scheme;
	std::string target;
	std::map<std::string, std::string> params;

	static Binding parse(std::string_view text);
	double number(const std::string &key, double fallback) const;
};

// One capture device. Frames are pulled by sequence number; the caller owns
// timing so the same source runs under a real or a simulated clock.
class Source {
public:
	explicit Source(StreamDescriptor desc) : desc_(std::move(desc)) {}
	virtual ~Source() = default;

	const StreamDescriptor &descriptor() const { return desc_; }

	virtual SourceStatus probe() = 0;

	// Payload of frame `seq`. Throws SourceFailure if the device is gone.
	virtual Bytes produce(std::uint64_t seq) = 0;

protected:
	SourceStatus status(SourceState state, std::string detail) const
	{
		return SourceStatus{desc_.stream_id, state, std::move(detail), std::nullopt};
	}

	StreamDescriptor desc_;
};

// Builds the source for a media descriptor (audio/video/depth). Returns
// nullptr for unknown bindings and for event-driven kinds.
std::unique_ptr<Source> make_source(const StreamDescriptor &desc, std::uint64_t seed = 0);

using SourceFactory = std::function<std::unique_ptr<Source>(const StreamDescriptor &)>;

// One status per descriptor, in input order. Synthetic bindings are always
// present; unknown bindings are absent.
std::vector<SourceStatus> probe_sources(const std::vector<StreamDescriptor> &config,
                                        const SourceFactory &factory = {});

// Decides when the next frame is due. Returns false to stop.
class Pacer {
public:
	virtual ~Pacer() = default;
	virtual bool wait_until(std::int64_t t_ns, std::stop_token stop) = 0;
};

// Sleeps on the steady clock until the deadline or a stop request.
class RealtimePacer final : public Pacer {
public:
	explicit RealtimePacer(const Clock &clock) : clock_(clock) {}
	bool wait_until(std::int64_t t_ns, std::stop_token stop) override;

private:
	const Clock &clock_;
	std::mutex mutex_;
	std::condition_variable_any cv_;
};

// Jumps a manual clock forward; stops at `end_ns` (exclusive).
class SimulatedPacer final : public Pacer {
public:
	SimulatedPacer(ManualClock &clock, std::int64_t end_ns) : clock_(clock), end_ns_(end_ns) {}
	bool wait_until(std::int64_t t_ns, std::stop_token stop) override;

private:
	ManualClock &clock_;
	std::int64_t end_ns_;
};

struct RunResult {
	std::uint64_t frames_emitted = 0;
	std::optional<std::uint64_t> final_seq;
	SourceStatus status;
};

using FrameSink = std::function<void(MediaFrame &&)>;

// Emits frames at the descriptor's nominal rate starting at `start_ns` until
// the pacer or stop token ends the run, or the device fails.
RunResult run_source(Source &source, const FrameSink &sink, Pacer &pacer, std::int64_t start_ns,
                     std::stop_token stop = {});

// Bounded queue between a source and the writer. Overflow drops the oldest
// frame and counts it so the gap can be logged.
class FrameQueue {
public:
	explicit FrameQueue(std::size_t capacity) : capacity_(capacity) {}

	void push(MediaFrame frame);
	std::vector<MediaFrame> drain();
	std::uint64_t take_dropped();
	std::size_t size() const;
	std::size_t capacity() const { return capacity_; }

private:
	std::size_t capacity_;
	mutable std::mutex mutex_;
	std::deque<MediaFrame> frames_;
	std::uint64_t dropped_ = 0;
};

// Two seconds of media.
std::size_t queue_capacity_for(const StreamDescriptor &desc);

// s16le interleaved <-> normalised float.
std::vector<float> s16le_to_float(ByteView payload);
Bytes float_to_s16le(std::span<const float> samples);
// First channel of interleaved s16le.
std::vector<float> s16le_channel(ByteView payload, std::uint16_t channels, std::uint16_t channel = 0);

// Frame RMS in dBFS; -inf for digital silence.
double rms_dbfs(std::span<const float> samples);

// ---------------------------------------------------------------------------
// Voice activity detection: energy threshold with hangover.

struct VadParams {
	std::uint32_t frame_ms = 30;
	double threshold_dbfs = -40.0;
	std::uint32_t hangover_frames = 0;
};

struct Segment {
	double t_start_s = 0;
	double t_end_s = 0;

	friend bool operator==(const Segment &, const Segment &) = default;
};

// Incremental form; feeding a signal in any split yields the same segments as
// the one-shot function. A trailing partial frame is not classified.
class StreamingVad {
public:
	StreamingVad(std::uint32_t sample_rate_hz, VadParams params);

	std::vector<Segment> push(std::span<const float> samples);
	std::vector<Segment> finish();

private:
	void classify_frame();
	Segment make_segment() const;

	std::uint32_t rate_;
	VadParams params_;
	std::size_t frame_len_;
	std::vector<float> buffer_;
	std::uint64_t frame_index_ = 0;
	std::optional<std::uint64_t> seg_start_;
	std::uint64_t last_marked_ = 0;
	std::uint32_t hang_ = 0;
	std::vector<Segment> out_;
};

// Maximal merged intervals where frame RMS >= threshold, extended by hangover.
// frame_ms must lie in [10, 100]; an empty signal gives no segments.
std::vector<Segment> vad_segments(std::span<const float> pcm, std::uint32_t sample_rate_hz,
                                  const VadParams &params);

// Parses VAD parameters from a "vad:<id>?frame_ms=..&threshold_db=..&hangover=.." binding.
VadParams vad_params_from_binding(const Binding &b);

} // namespace cusco::streams
