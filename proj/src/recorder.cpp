#include "cusco/recorder.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <condition_variable>

#include <json.hpp>

namespace cusco::streams {

struct Recorder::Lane {
	StreamDescriptor desc;
	std::int64_t period = 0;
	std::unique_ptr<Source> source;
	std::unique_ptr<FrameQueue> queue;
	std::uint64_t next_seq = 0;
	bool failed = false;

	std::vector<MediaFrame> pending;
	std::uint64_t pending_bytes = 0;
	StreamCounters counters;

	// vad_events lanes: the audio stream they listen to.
	std::optional<std::uint32_t> vad_of;
	VadParams vad_params;
	std::unique_ptr<StreamingVad> vad;
	std::int64_t vad_base_ns = 0;
};

Recorder::Recorder(container::ContainerWriter writer, const Clock &clock, std::int64_t start_ns,
                   RecorderOptions options)
    : writer_(std::move(writer)), clock_(clock), options_(std::move(options)), start_ns_(start_ns)
{
	const auto &table = writer_.header().stream_table;
	for (const auto &d : table) {
		auto lane = std::make_unique<Lane>();
		lane->desc = d;
		lane->period = frame_period_ns(d);
		lane->counters.stream_id = d.stream_id;
		lane->counters.status = SourceStatus{d.stream_id, SourceState::present, "", std::nullopt};
		const bool skipped = std::find(options_.skip_streams.begin(), options_.skip_streams.end(),
		                               d.stream_id) != options_.skip_streams.end();
		if (skipped) {
			lane->failed = true;
			lane->counters.status.state = SourceState::absent;
			lane->counters.status.detail = "not captured (operator override)";
		} else if (is_media(d.kind)) {
			lane->source = options_.factory ? options_.factory(d) : make_source(d, options_.seed);
			if (!lane->source) {
				lane->failed = true;
				lane->counters.status.state = SourceState::absent;
				lane->counters.status.detail = "unknown binding '" + d.device_binding + "'";
			}
			lane->queue = std::make_unique<FrameQueue>(queue_capacity_for(d));
		} else if (d.kind == StreamKind::vad_events) {
			auto b = Binding::parse(d.device_binding);
			std::uint32_t id = 0;
			auto [p, ec] = std::from_chars(b.target.data(), b.target.data() + b.target.size(), id);
			if (b.scheme == "vad" && ec == std::errc() && id < table.size() &&
			    table[id].kind == StreamKind::audio) {
				lane->vad_of = id;
				lane->vad_params = vad_params_from_binding(b);
			} else {
				lane->failed = true;
				lane->counters.status.state = SourceState::absent;
				lane->counters.status.detail = "vad binding must name an audio stream";
			}
		} else if (d.kind == StreamKind::meta && !meta_stream_) {
			meta_stream_ = d.stream_id;
		}
		lanes_.push_back(std::move(lane));
	}

	if (!options_.realtime)
		return;
	for (auto &lp : lanes_) {
		Lane *lane = lp.get();
		if (!lane->source || lane->failed)
			continue;
		threads_.emplace_back([this, lane, start_ns](std::stop_token stop) {
			RealtimePacer pacer(clock_);
			auto r = run_source(
			    *lane->source, [lane](MediaFrame &&f) { lane->queue->push(std::move(f)); }, pacer,
			    start_ns, stop);
			if (r.status.state == SourceState::error) {
				std::lock_guard lock(mutex_);
				lane->failed = true;
				lane->counters.status.state = SourceState::error;
				lane->counters.status.detail = r.status.detail;
				events_.push_back({lane->desc.stream_id, "source_error", 0, r.status.detail, clock_.now_ns()});
			}
		});
	}
	threads_.emplace_back([this](std::stop_token stop) { consumer_loop(stop); });
}

Recorder::~Recorder()
{
	stop_threads();
	if (finished_)
		return;
	// Abandoned without finish(): keep what was accepted, leave the file
	// footerless like a crash would.
	try {
		std::lock_guard lock(mutex_);
		for (auto &l : lanes_)
			flush_locked(*l);
	} catch (const Error &) {
	}
}

void Recorder::stop_threads()
{
	for (auto &t : threads_)
		t.request_stop();
	for (auto &t : threads_)
		if (t.joinable())
			t.join();
	threads_.clear();
}

void Recorder::consumer_loop(std::stop_token stop)
{
	std::mutex m;
	std::condition_variable_any cv;
	while (!stop.stop_requested()) {
		{
			std::unique_lock lk(m);
			cv.wait_for(lk, stop, std::chrono::milliseconds(20), [] { return false; });
		}
		if (stop.stop_requested())
			break;
		std::lock_guard lock(mutex_);
		if (!finished_)
			drain_locked();
	}
}

void Recorder::drain_locked()
{
	for (auto &lp : lanes_) {
		Lane &lane = *lp;
		if (!lane.queue)
			continue;
		auto frames = lane.queue->drain();
		for (auto &f : frames)
			accept_locked(lane, std::move(f));
		if (auto n = lane.queue->take_dropped()) {
			lane.counters.frames_dropped_overflow += n;
			events_.push_back({lane.desc.stream_id, "queue_overflow", n, "", clock_.now_ns()});
		}
	}
}

void Recorder::accept_locked(Lane &lane, MediaFrame &&frame)
{
	lane.counters.status.last_frame_at_ns = frame.t_capture_ns;
	if (!open_.load() || frame.t_capture_ns < window_start_) {
		lane.counters.frames_dropped_paused++;
		return;
	}
	lane.counters.frames_captured++;

	const auto &limits = writer_.header().chunk_params;
	const auto max_ns = static_cast<std::int64_t>(limits.max_chunk_duration_ms) * kNsPerMs;
	if (!lane.pending.empty()) {
		const bool over_bytes = lane.pending_bytes + frame.payload.size() > limits.max_chunk_bytes;
		const bool over_time = frame.t_capture_ns + lane.period - lane.pending.front().t_capture_ns > max_ns;
		if (over_bytes || over_time)
			flush_locked(lane);
	}

	// Audio feeds any VAD stream listening to it.
	if (lane.desc.kind == StreamKind::audio) {
		for (auto &vp : lanes_) {
			Lane &v = *vp;
			if (!v.vad_of || *v.vad_of != lane.desc.stream_id || v.failed)
				continue;
			if (!v.vad) {
				v.vad = std::make_unique<StreamingVad>(lane.desc.audio->sample_rate_hz, v.vad_params);
				v.vad_base_ns = frame.t_capture_ns;
			}
			auto pcm = s16le_channel(frame.payload, lane.desc.audio->channels, 0);
			for (const auto &seg : v.vad->push(pcm)) {
				const auto origin = writer_.header().session.time_origin_ns;
				const double base_s = static_cast<double>(v.vad_base_ns - origin) / kNsPerSec;
				nlohmann::json j = {{"t_start_s", base_s + seg.t_start_s}, {"t_end_s", base_s + seg.t_end_s}};
				auto text = j.dump() + "\n";
				MediaFrame ev{v.desc.stream_id, v.next_seq++,
				              v.vad_base_ns + std::llround(seg.t_start_s * kNsPerSec),
				              Bytes(text.begin(), text.end())};
				v.counters.frames_captured++;
				v.pending_bytes += ev.payload.size();
				v.pending.push_back(std::move(ev));
			}
			if (!v.pending.empty() && frame.t_capture_ns - v.pending.front().t_capture_ns > max_ns)
				flush_locked(v);
		}
	}

	lane.pending_bytes += frame.payload.size();
	lane.pending.push_back(std::move(frame));
	const auto &last = lane.pending.back();
	// Seal as soon as the next frame could not fit, so at most one chunk of
	// plaintext per stream sits in memory.
	if (lane.pending_bytes >= limits.max_chunk_bytes ||
	    (lane.period > 0 && last.t_capture_ns + 2 * lane.period - lane.pending.front().t_capture_ns > max_ns))
		flush_locked(lane);
}

void Recorder::flush_locked(Lane &lane)
{
	if (lane.pending.empty())
		return;
	writer_.append_chunk(lane.desc.stream_id, lane.pending);
	lane.counters.chunks_written++;
	lane.pending.clear();
	lane.pending_bytes = 0;
}

void Recorder::close_vad_locked()
{
	const auto origin = writer_.header().session.time_origin_ns;
	for (auto &vp : lanes_) {
		Lane &v = *vp;
		if (!v.vad)
			continue;
		const double base_s = static_cast<double>(v.vad_base_ns - origin) / kNsPerSec;
		for (const auto &seg : v.vad->finish()) {
			nlohmann::json j = {{"t_start_s", base_s + seg.t_start_s}, {"t_end_s", base_s + seg.t_end_s}};
			auto text = j.dump() + "\n";
			v.pending.push_back(MediaFrame{v.desc.stream_id, v.next_seq++,
			                               v.vad_base_ns + std::llround(seg.t_start_s * kNsPerSec),
			                               Bytes(text.begin(), text.end())});
			v.counters.frames_captured++;
		}
		v.vad.reset();
	}
}

void Recorder::begin_window(std::int64_t t_ns)
{
	std::lock_guard lock(mutex_);
	if (finished_)
		throw PreconditionError("recorder already finished");
	if (options_.realtime)
		drain_locked();
	window_start_ = t_ns;
	open_.store(true);
}

void Recorder::end_window(std::int64_t t_ns)
{
	std::lock_guard lock(mutex_);
	if (!open_.load())
		return;
	if (options_.realtime) {
		// Whatever is queued was captured before the pause request unless its
		// timestamp says otherwise.
		for (auto &lp : lanes_) {
			if (!lp->queue)
				continue;
			for (auto &f : lp->queue->drain()) {
				if (f.t_capture_ns < t_ns)
					accept_locked(*lp, std::move(f));
				else
					lp->counters.frames_dropped_paused++;
			}
		}
	}
	open_.store(false);
	close_vad_locked();
	for (auto &l : lanes_)
		flush_locked(*l);
}

void Recorder::pump(std::int64_t now_ns)
{
	if (options_.realtime)
		return;
	std::lock_guard lock(mutex_);
	if (finished_)
		return;
	for (auto &lp : lanes_) {
		Lane &lane = *lp;
		if (!lane.source || lane.failed || lane.period <= 0)
			continue;
		while (true) {
			const std::int64_t t = start_ns_ + static_cast<std::int64_t>(lane.next_seq) * lane.period;
			if (t >= now_ns)
				break;
			MediaFrame f{lane.desc.stream_id, lane.next_seq, t, {}};
			try {
				f.payload = lane.source->produce(lane.next_seq);
			} catch (const SourceFailure &e) {
				lane.failed = true;
				lane.counters.status.state = SourceState::error;
				lane.counters.status.detail = e.what();
				events_.push_back({lane.desc.stream_id, "source_error", 0, e.what(), t});
				break;
			}
			lane.next_seq++;
			accept_locked(lane, std::move(f));
		}
	}
}

std::int64_t Recorder::append_meta(const std::string &lines, std::int64_t t_ns)
{
	std::lock_guard lock(mutex_);
	if (!meta_stream_)
		throw PreconditionError("container has no meta stream");
	if (finished_)
		throw PreconditionError("recorder already finished");
	Lane &lane = *lanes_[*meta_stream_];
	const std::int64_t t = std::max(t_ns, last_meta_t_ + 1);
	MediaFrame f{lane.desc.stream_id, lane.next_seq++, t, Bytes(lines.begin(), lines.end())};
	writer_.append_chunk(lane.desc.stream_id, std::span<const MediaFrame>(&f, 1));
	lane.counters.frames_captured++;
	lane.counters.chunks_written++;
	last_meta_t_ = t;
	return t;
}

void Recorder::finish(std::int64_t t_ns)
{
	end_window(t_ns);
	stop_threads();
	std::lock_guard lock(mutex_);
	if (finished_)
		return;
	for (auto &lp : lanes_) {
		if (lp->queue) {
			auto dropped = lp->queue->drain();
			lp->counters.frames_dropped_paused += dropped.size();
		}
		flush_locked(*lp);
	}
	writer_.finalize();
	finished_ = true;
}

std::vector<RecorderEvent> Recorder::take_events()
{
	std::lock_guard lock(mutex_);
	return std::exchange(events_, {});
}

std::vector<StreamCounters> Recorder::counters() const
{
	std::lock_guard lock(mutex_);
	std::vector<StreamCounters> out;
	for (const auto &l : lanes_)
		out.push_back(l->counters);
	return out;
}

std::uint64_t Recorder::chunk_count() const
{
	std::lock_guard lock(mutex_);
	return writer_.chunk_count();
}

std::uint64_t Recorder::bytes_written() const
{
	std::lock_guard lock(mutex_);
	return writer_.bytes_written();
}

crypto::RatchetState Recorder::ratchet_snapshot() const
{
	std::lock_guard lock(mutex_);
	return writer_.ratchet_snapshot();
}

} // namespace cusco::streams
