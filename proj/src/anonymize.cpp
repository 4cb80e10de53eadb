#include "cusco/anonymize.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <ostream>

#include "cusco/container.hpp"

namespace cusco::anonymize {

namespace {

double quantize(double v, double step) { return std::round(v / step) * step; }

// Round trips through JSON without long decimal tails.
double tidy(double v, int digits)
{
	const double s = std::pow(10.0, digits);
	return std::round(v * s) / s;
}

} // namespace

void AudioFeatureParams::validate() const
{
	if (window_ms < kMinWindowMs)
		throw ConfigError("feature window " + std::to_string(window_ms) + " ms is below the " +
		                  std::to_string(kMinWindowMs) + " ms anonymization floor");
}

StreamingAudioFeatures::StreamingAudioFeatures(std::uint32_t sample_rate_hz, AudioFeatureParams params,
                                               double t_offset_s)
    : rate_(sample_rate_hz), params_(params), t_offset_(t_offset_s)
{
	params_.validate();
	if (sample_rate_hz == 0)
		throw ConfigError("sample rate must be positive");
	window_samples_ = static_cast<std::size_t>(std::uint64_t(rate_) * params_.window_ms / 1000);
	if (window_samples_ == 0)
		throw ConfigError("feature window holds no samples");
}

FeatureFrame StreamingAudioFeatures::window_frame(std::span<const float> w, std::uint64_t first_sample) const
{
	FeatureFrame f;
	f.t_start_s = t_offset_ + static_cast<double>(first_sample) / rate_;
	f.t_end_s = t_offset_ + static_cast<double>(first_sample + w.size()) / rate_;
	double energy = 0, diff = 0;
	for (std::size_t i = 0; i < w.size(); ++i) {
		const double x = w[i];
		const double prev = w[i == 0 ? w.size() - 1 : i - 1];
		energy += x * x;
		diff += (x - prev) * (x - prev);
	}
	if (energy > 0) {
		const double db = 10.0 * std::log10(energy / static_cast<double>(w.size()));
		f.rms_db = std::clamp(quantize(db, 0.01), kRmsFloorDb, 0.0);
		const double c = std::clamp(1.0 - diff / energy / 2.0, -1.0, 1.0);
		f.zero_crossing_rate = quantize(rate_ * std::acos(c) / std::numbers::pi, 0.1);
	}
	f.voiced = f.rms_db >= params_.voiced_threshold_dbfs;
	return f;
}

std::vector<FeatureFrame> StreamingAudioFeatures::push(std::span<const float> samples)
{
	std::vector<FeatureFrame> out;
	buf_.insert(buf_.end(), samples.begin(), samples.end());
	std::size_t pos = 0;
	while (buf_.size() - pos >= window_samples_) {
		out.push_back(window_frame(std::span(buf_).subspan(pos, window_samples_), consumed_));
		consumed_ += window_samples_;
		pos += window_samples_;
	}
	buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos));
	return out;
}

std::vector<FeatureFrame> StreamingAudioFeatures::finish()
{
	std::vector<FeatureFrame> out;
	if (!buf_.empty()) {
		out.push_back(window_frame(buf_, consumed_));
		consumed_ += buf_.size();
		buf_.clear();
	}
	return out;
}

std::vector<FeatureFrame> extract_audio_features(std::span<const float> pcm, std::uint32_t sample_rate_hz,
                                                 const AudioFeatureParams &params, double t_offset_s)
{
	StreamingAudioFeatures s(sample_rate_hz, params, t_offset_s);
	auto out = s.push(pcm);
	auto tail = s.finish();
	out.insert(out.end(), tail.begin(), tail.end());
	return out;
}

Eigen::ArrayXXf intensity(ByteView payload, const VideoParams &p)
{
	const auto w = static_cast<Eigen::Index>(p.width_px);
	const auto h = static_cast<Eigen::Index>(p.height_px);
	const auto bpp = bytes_per_pixel(p);
	if (payload.size() != static_cast<std::size_t>(w * h) * bpp)
		throw PreconditionError("frame of " + std::to_string(payload.size()) + " bytes does not match " +
		                        std::to_string(w) + "x" + std::to_string(h) + " " + p.pixel_format);
	Eigen::ArrayXXf img(h, w);
	const auto *d = payload.data();
	for (Eigen::Index y = 0; y < h; ++y) {
		for (Eigen::Index x = 0; x < w; ++x) {
			const auto i = static_cast<std::size_t>(y * w + x);
			if (p.pixel_format == "gray8")
				img(y, x) = d[i] / 255.0f;
			else if (p.pixel_format == "rgb24")
				img(y, x) = (d[3 * i] + d[3 * i + 1] + d[3 * i + 2]) / (3.0f * 255.0f);
			else
				img(y, x) = static_cast<float>(d[2 * i] | (d[2 * i + 1] << 8)) / 65535.0f;
		}
	}
	return img;
}

Eigen::MatrixXf motion_grid(const Eigen::ArrayXXf &a, const Eigen::ArrayXXf &b, int grid)
{
	if (grid < 1 || grid > kMaxGrid)
		throw ConfigError("motion grid must be between 1 and " + std::to_string(kMaxGrid));
	if (a.rows() != b.rows() || a.cols() != b.cols())
		throw PreconditionError("frame geometry changed");
	if (a.rows() < grid || a.cols() < grid)
		throw ConfigError("motion grid is finer than the frame");
	const Eigen::ArrayXXf diff = (a - b).abs();
	Eigen::MatrixXf out(grid, grid);
	for (int r = 0; r < grid; ++r) {
		const auto y0 = a.rows() * r / grid, y1 = a.rows() * (r + 1) / grid;
		for (int c = 0; c < grid; ++c) {
			const auto x0 = a.cols() * c / grid, x1 = a.cols() * (c + 1) / grid;
			out(r, c) = diff.block(y0, x0, y1 - y0, x1 - x0).mean();
		}
	}
	return out;
}

std::vector<MotionFrame> extract_motion_features(std::span<const MediaFrame> frames, const VideoParams &p, int grid,
                                                 std::int64_t time_origin_ns)
{
	if (frames.size() < 2)
		throw PreconditionError("motion features need at least two frames");
	std::vector<MotionFrame> out;
	auto prev = intensity(frames[0].payload, p);
	for (std::size_t i = 1; i < frames.size(); ++i) {
		auto cur = intensity(frames[i].payload, p);
		out.push_back({static_cast<double>(frames[i].t_capture_ns - time_origin_ns) / kNsPerSec,
		               motion_grid(cur, prev, grid)});
		prev = std::move(cur);
	}
	return out;
}

PauseStats pause_statistics(std::span<const streams::Segment> speech, double session_span_s)
{
	if (!(session_span_s > 0))
		throw PreconditionError("session span must be positive");
	PauseStats s;
	double cursor = 0, speech_total = 0;
	for (const auto &seg : speech) {
		if (seg.t_start_s < 0 || seg.t_end_s > session_span_s || seg.t_start_s > seg.t_end_s)
			throw PreconditionError("speech segment [" + std::to_string(seg.t_start_s) + ", " +
			                        std::to_string(seg.t_end_s) + "] lies outside the session span");
		if (seg.t_start_s < cursor)
			throw PreconditionError("speech segments overlap or are unsorted");
		if (seg.t_start_s > cursor)
			s.pauses.push_back({cursor, seg.t_start_s});
		speech_total += seg.t_end_s - seg.t_start_s;
		cursor = seg.t_end_s;
	}
	if (cursor < session_span_s)
		s.pauses.push_back({cursor, session_span_s});
	s.pause_count = s.pauses.size();
	s.speech_ratio = speech_total / session_span_s;
	s.total_pause_ratio = 1.0 - s.speech_ratio;
	if (!s.pauses.empty()) {
		std::vector<double> d;
		for (const auto &p : s.pauses)
			d.push_back(p.t_end_s - p.t_start_s);
		double sum = 0;
		for (double x : d)
			sum += x;
		s.mean_pause_s = sum / static_cast<double>(d.size());
		std::sort(d.begin(), d.end());
		const auto n = d.size();
		s.median_pause_s = n % 2 ? d[n / 2] : (d[n / 2 - 1] + d[n / 2]) / 2;
	}
	return s;
}

nlohmann::json audio_record(std::span<const FeatureFrame> frames, std::uint32_t stream_id)
{
	auto rms = nlohmann::json::array(), zcr = nlohmann::json::array(), voiced = nlohmann::json::array();
	for (const auto &f : frames) {
		rms.push_back(tidy(f.rms_db, 2));
		zcr.push_back(tidy(f.zero_crossing_rate, 1));
		voiced.push_back(f.voiced ? 1 : 0);
	}
	const double t0 = frames.empty() ? 0 : frames.front().t_start_s;
	const double t1 = frames.empty() ? 0 : frames.back().t_end_s;
	const double win = frames.empty() ? 0 : frames.front().t_end_s - frames.front().t_start_s;
	return {{"kind", "audio"},  {"stream_id", stream_id}, {"t_start_s", tidy(t0, 6)}, {"t_end_s", tidy(t1, 6)},
	        {"window_s", tidy(win, 6)}, {"rms_db", rms}, {"zcr", zcr}, {"voiced", voiced}};
}

nlohmann::json to_json(const MotionFrame &f, std::uint32_t stream_id)
{
	auto grid = nlohmann::json::array();
	for (Eigen::Index r = 0; r < f.grid.rows(); ++r) {
		auto row = nlohmann::json::array();
		for (Eigen::Index c = 0; c < f.grid.cols(); ++c)
			row.push_back(tidy(f.grid(r, c), 4));
		grid.push_back(row);
	}
	return {{"kind", "motion"}, {"stream_id", stream_id}, {"t_s", tidy(f.t_s, 6)}, {"grid", grid}};
}

nlohmann::json to_json(const PauseStats &s, std::uint32_t stream_id)
{
	return {{"kind", "pauses"},
	        {"stream_id", stream_id},
	        {"pause_count", s.pause_count},
	        {"mean_pause_s", tidy(s.mean_pause_s, 3)},
	        {"median_pause_s", tidy(s.median_pause_s, 3)},
	        {"total_pause_ratio", tidy(s.total_pause_ratio, 4)},
	        {"speech_ratio", tidy(s.speech_ratio, 4)}};
}

namespace {

const StreamDescriptor &find_stream(const std::vector<StreamDescriptor> &table, std::uint32_t id)
{
	for (const auto &d : table)
		if (d.stream_id == id)
			return d;
	throw PreconditionError("unknown stream " + std::to_string(id));
}

// Shared by the offline and live drivers.
ExtractSummary extract_frames(const std::string &session_id, const std::vector<StreamDescriptor> &table,
                              std::int64_t origin, const std::map<std::uint32_t, std::vector<MediaFrame>> &by_stream,
                              std::uint64_t media_bytes, std::ostream &out, const ExtractOptions &opts)
{
	ExtractSummary sum;
	sum.media_bytes = media_bytes;
	auto emit = [&](const nlohmann::json &j) {
		auto line = j.dump() + "\n";
		sum.feature_bytes += line.size();
		out << line;
	};

	auto streams = nlohmann::json::array();
	for (const auto &d : table)
		if (is_media(d.kind))
			streams.push_back({{"stream_id", d.stream_id}, {"kind", to_string(d.kind)}, {"label", d.label}});
	emit({{"kind", "header"},
	      {"schema", kSchema},
	      {"session_id", session_id},
	      {"window_ms", opts.audio.window_ms},
	      {"grid", opts.grid},
	      {"streams", streams}});

	for (const auto &[id, frames] : by_stream) {
		const auto &d = find_stream(table, id);
		if (frames.empty())
			continue;
		if (d.kind == StreamKind::audio) {
			const auto &a = *d.audio;
			// Contiguous runs; a recording pause splits the timeline.
			std::vector<streams::Segment> speech;
			const double first_s = static_cast<double>(frames.front().t_capture_ns - origin) / kNsPerSec;
			double last_end_s = first_s;
			std::size_t i = 0;
			while (i < frames.size()) {
				std::vector<float> pcm;
				const auto run_t0 = frames[i].t_capture_ns;
				std::int64_t expect = run_t0;
				std::uint64_t samples = 0;
				while (i < frames.size() && std::llabs(frames[i].t_capture_ns - expect) < 1000) {
					auto ch = streams::s16le_channel(frames[i].payload, a.channels);
					pcm.insert(pcm.end(), ch.begin(), ch.end());
					samples += ch.size();
					expect = run_t0 + static_cast<std::int64_t>(samples * kNsPerSec / a.sample_rate_hz);
					++i;
				}
				const double t0 = static_cast<double>(run_t0 - origin) / kNsPerSec;
				auto feats = extract_audio_features(pcm, a.sample_rate_hz, opts.audio, t0);
				sum.audio_frames += feats.size();
				emit(audio_record(feats, id));
				if (pcm.size() >= static_cast<std::size_t>(a.sample_rate_hz) * opts.vad.frame_ms / 1000)
					for (auto seg : streams::vad_segments(pcm, a.sample_rate_hz, opts.vad))
						speech.push_back({seg.t_start_s + t0 - first_s, seg.t_end_s + t0 - first_s});
				// A trailing partial VAD frame is never classified, so it is
				// left out of the span rather than counted as a pause.
				const auto vad_frame = std::size_t(a.sample_rate_hz) * opts.vad.frame_ms / 1000;
				last_end_s = t0 + static_cast<double>(pcm.size() / vad_frame * vad_frame) / a.sample_rate_hz;
			}
			const double span = last_end_s - first_s;
			if (span > 0) {
				// Run offsets and VAD frame times are computed differently;
				// snap sub-microsecond slivers at the span edges.
				for (auto &s : speech) {
					if (s.t_start_s < 1e-6)
						s.t_start_s = 0;
					if (s.t_end_s > span - 1e-6)
						s.t_end_s = span;
				}
				auto j = to_json(pause_statistics(speech, span), id);
				j["t_origin_s"] = tidy(first_s, 6);
				j["span_s"] = tidy(span, 6);
				emit(j);
			}
		} else if (frames.size() >= 2) {
			for (const auto &m : extract_motion_features(frames, *d.video, opts.grid, origin)) {
				emit(to_json(m, id));
				sum.motion_frames++;
			}
		}
	}
	return sum;
}

} // namespace

ExtractSummary extract_container_features(const std::filesystem::path &container, const crypto::SecretKey &priv,
                                          std::ostream &out, const ExtractOptions &opts)
{
	opts.audio.validate();
	auto reader = container::ContainerReader::open(container, priv);
	const auto &header = reader.header();
	std::uint64_t media_bytes = 0;
	std::map<std::uint32_t, std::vector<MediaFrame>> by_stream;
	while (auto chunk = reader.next()) {
		const auto &d = header.stream(chunk->record.stream_id);
		if (!is_media(d.kind))
			continue;
		for (auto &f : chunk->frames) {
			media_bytes += f.payload.size();
			by_stream[d.stream_id].push_back(std::move(f));
		}
	}
	return extract_frames(header.session.session_id.str(), header.stream_table, header.session.time_origin_ns,
	                      by_stream, media_bytes, out, opts);
}

ExtractSummary extract_live_features(const std::vector<StreamDescriptor> &table, double seconds, std::ostream &out,
                                     const ExtractOptions &opts, std::uint64_t seed)
{
	opts.audio.validate();
	if (!(seconds > 0))
		throw ConfigError("live extraction needs a positive duration");
	std::uint64_t media_bytes = 0;
	std::map<std::uint32_t, std::vector<MediaFrame>> by_stream;
	const auto end = static_cast<std::int64_t>(seconds * kNsPerSec);
	for (const auto &d : table) {
		if (!is_media(d.kind))
			continue;
		auto src = streams::make_source(d, seed);
		if (!src)
			throw ConfigError("stream " + std::to_string(d.stream_id) + ": no source for binding " + d.device_binding);
		const auto period = frame_period_ns(d);
		auto &frames = by_stream[d.stream_id];
		for (std::uint64_t seq = 0; static_cast<std::int64_t>(seq) * period < end; ++seq) {
			MediaFrame f{d.stream_id, seq, static_cast<std::int64_t>(seq) * period, src->produce(seq)};
			media_bytes += f.payload.size();
			frames.push_back(std::move(f));
		}
	}
	return extract_frames("live", table, 0, by_stream, media_bytes, out, opts);
}

} // namespace cusco::anonymize
