#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cusco/container.hpp"
#include "cusco/streams.hpp"

namespace cusco::streams {

struct RecorderOptions {
	// Threaded capture paced by the clock; otherwise frames are produced only
	// by pump(), which is how tests drive a simulated clock.
	bool realtime = false;
	std::uint64_t seed = 0;
	SourceFactory factory;
	// Streams left out of capture (absent sources the operator overrode).
	std::vector<std::uint32_t> skip_streams;
};

struct StreamCounters {
	std::uint32_t stream_id = 0;
	std::uint64_t frames_captured = 0;
	std::uint64_t frames_dropped_paused = 0;
	std::uint64_t frames_dropped_overflow = 0;
	std::uint64_t chunks_written = 0;
	SourceStatus status;
};

// Something the session log must record: a queue overflow or a device failure.
struct RecorderEvent {
	std::uint32_t stream_id = 0;
	std::string kind; // "queue_overflow" | "source_error"
	std::uint64_t frames_dropped = 0;
	std::string detail;
	std::int64_t at_ns = 0;
};

// Moves frames from the configured sources into one container writer. Media is
// accepted only inside capture windows; frames outside them are dropped before
// they reach the writer. All writer access is serialised here.
class Recorder {
public:
	Recorder(container::ContainerWriter writer, const Clock &clock, std::int64_t start_ns,
	         RecorderOptions options = {});
	Recorder(const Recorder &) = delete;
	Recorder &operator=(const Recorder &) = delete;
	~Recorder();

	// Accept media captured at or after `t_ns`.
	void begin_window(std::int64_t t_ns);
	// Drop media captured at or after `t_ns` and flush what was accepted.
	void end_window(std::int64_t t_ns);
	bool window_open() const { return open_.load(); }

	// Stepped mode: produce every frame due strictly before `now_ns`.
	void pump(std::int64_t now_ns);

	// Seals one meta chunk immediately; returns its timestamp.
	std::int64_t append_meta(const std::string &lines, std::int64_t t_ns);

	// Stops capture, flushes and writes the footer.
	void finish(std::int64_t t_ns);

	std::vector<RecorderEvent> take_events();
	std::vector<StreamCounters> counters() const;
	std::uint64_t chunk_count() const;
	std::uint64_t bytes_written() const;
	const container::ContainerHeader &header() const { return writer_.header(); }
	std::optional<std::uint32_t> meta_stream() const { return meta_stream_; }
	crypto::RatchetState ratchet_snapshot() const;

private:
	struct Lane;

	void accept_locked(Lane &lane, MediaFrame &&frame);
	void flush_locked(Lane &lane);
	void drain_locked();
	void close_vad_locked();
	void consumer_loop(std::stop_token stop);
	void stop_threads();

	container::ContainerWriter writer_;
	const Clock &clock_;
	RecorderOptions options_;
	std::int64_t start_ns_;
	mutable std::mutex mutex_;
	std::vector<std::unique_ptr<Lane>> lanes_;
	std::optional<std::uint32_t> meta_stream_;
	std::atomic<bool> open_{false};
	std::int64_t window_start_ = 0;
	std::int64_t last_meta_t_ = INT64_MIN;
	std::vector<RecorderEvent> events_;
	std::vector<std::jthread> threads_;
	bool finished_ = false;
};

} // namespace cusco::streams
