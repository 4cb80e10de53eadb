#include "cusco/streams.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>

namespace cusco::streams {

std::string_view to_string(SourceState s)
{
	switch (s) {
	case SourceState::present:
		return "present";
	case SourceState::absent:
		return "absent";
	case SourceState::error:
		return "error";
	}
	return "unknown";
}

Binding Binding::parse(std::string_view text)
{
	Binding b;
	auto colon = text.find(':');
	if (colon == std::string_view::npos) {
		b.scheme = std::string(text);
		return b;
	}
	b.scheme = std::string(text.substr(0, colon));
	auto rest = text.substr(colon + 1);
	auto q = rest.find('?');
	b.target = std::string(rest.substr(0, q));
	if (q == std::string_view::npos)
		return b;
	auto query = rest.substr(q + 1);
	while (!query.empty()) {
		auto amp = query.find('&');
		auto kv = query.substr(0, amp);
		auto eq = kv.find('=');
		if (eq == std::string_view::npos)
			b.params[std::string(kv)] = "";
		else
			b.params[std::string(kv.substr(0, eq))] = std::string(kv.substr(eq + 1));
		if (amp == std::string_view::npos)
			break;
		query = query.substr(amp + 1);
	}
	return b;
}

double Binding::number(const std::string &key, double fallback) const
{
	auto it = params.find(key);
	if (it == params.end())
		return fallback;
	try {
		std::size_t used = 0;
		double v = std::stod(it->second, &used);
		if (used != it->second.size())
			throw std::invalid_argument(key);
		return v;
	} catch (const std::exception &) {
		throw ConfigError("device_binding: parameter '" + key + "' is not a number");
	}
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b)
{
	// splitmix64 over the pair, for per-frame seeds.
	std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
	z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
	z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
	return z ^ (z >> 31);
}

std::int16_t to_s16(double x)
{
	double v = std::round(x * 32767.0);
	return static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0));
}

void put_s16le(Bytes &out, std::size_t at, std::int16_t v)
{
	auto u = static_cast<std::uint16_t>(v);
	out[at] = static_cast<std::uint8_t>(u & 0xFF);
	out[at + 1] = static_cast<std::uint8_t>(u >> 8);
}

enum class Generator { sine, silence, noise, testcard, ramp };

std::optional<Generator> parse_generator(const std::string &name, double &freq)
{
	if (name.rfind("sine", 0) == 0) {
		auto digits = name.substr(4);
		freq = 440.0;
		if (!digits.empty()) {
			auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), freq);
			if (ec != std::errc() || p != digits.data() + digits.size() || freq <= 0)
				return std::nullopt;
		}
		return Generator::sine;
	}
	if (name == "silence")
		return Generator::silence;
	if (name == "noise")
		return Generator::noise;
	if (name == "testcard")
		return Generator::testcard;
	if (name == "ramp")
		return Generator::ramp;
	return std::nullopt;
}

class SyntheticSource final : public Source {
public:
	SyntheticSource(StreamDescriptor desc, Binding binding, Generator gen, double freq,
	                std::uint64_t seed)
	    : Source(std::move(desc)), gen_(gen), freq_(freq), seed_(seed)
	{
		amp_ = binding.number("amp", 0.5);
		phase_ = binding.number("phase", 0.0);
		auto fa = binding.number("fail_after", -1);
		if (fa >= 0)
			fail_after_ = static_cast<std::uint64_t>(fa);
		if (binding.params.count("seed"))
			seed_ = static_cast<std::uint64_t>(binding.number("seed", 0));
		if (amp_ < 0 || amp_ > 1)
			throw ConfigError("device_binding: amp must lie in [0, 1]");
	}

	SourceStatus probe() override { return status(SourceState::present, "synthetic"); }

	Bytes produce(std::uint64_t seq) override
	{
		if (fail_after_ && seq >= *fail_after_)
			throw SourceFailure("synthetic device failed after " + std::to_string(*fail_after_) +
			                    " frames");
		if (desc_.kind == StreamKind::audio)
			return audio(seq);
		return picture(seq);
	}

private:
	Bytes audio(std::uint64_t seq) const
	{
		const auto &a = *desc_.audio;
		const std::size_t n = samples_per_block(a);
		const std::size_t ch = a.channels;
		Bytes out(n * ch * 2, 0);
		std::mt19937_64 rng(mix(seed_ ^ desc_.stream_id, seq));
		std::uniform_real_distribution<double> uni(-1.0, 1.0);
		for (std::size_t i = 0; i < n; ++i) {
			const std::uint64_t idx = seq * n + i;
			for (std::size_t c = 0; c < ch; ++c) {
				double x = 0;
				switch (gen_) {
				case Generator::sine:
					x = amp_ * std::sin(2.0 * std::numbers::pi * freq_ * static_cast<double>(idx) /
					                        a.sample_rate_hz +
					                    phase_);
					break;
				case Generator::noise:
					x = amp_ * uni(rng);
					break;
				default:
					break;
				}
				put_s16le(out, (i * ch + c) * 2, to_s16(x));
			}
		}
		return out;
	}

	Bytes picture(std::uint64_t seq) const
	{
		const auto &v = *desc_.video;
		const std::size_t bpp = bytes_per_pixel(v);
		Bytes out(static_cast<std::size_t>(v.width_px) * v.height_px * bpp, 0);
		std::mt19937_64 rng(mix(seed_ ^ desc_.stream_id, seq));
		std::size_t o = 0;
		for (std::uint32_t y = 0; y < v.height_px; ++y) {
			for (std::uint32_t x = 0; x < v.width_px; ++x) {
				if (v.pixel_format == "gray16le") {
					std::uint16_t d = 0;
					if (gen_ == Generator::ramp || gen_ == Generator::testcard)
						d = static_cast<std::uint16_t>(500 + ((x + seq) % v.width_px) * 10 + y);
					else if (gen_ == Generator::noise)
						d = static_cast<std::uint16_t>(rng());
					out[o++] = static_cast<std::uint8_t>(d & 0xFF);
					out[o++] = static_cast<std::uint8_t>(d >> 8);
					continue;
				}
				std::uint8_t g = 0;
				switch (gen_) {
				case Generator::testcard: {
					// 4-pixel checkerboard with a bright bar sweeping left to right.
					const bool dark = ((x / 4) + (y / 4)) % 2 == 0;
					g = dark ? 30 : 220;
					if ((x + v.width_px - (seq * 2) % v.width_px) % v.width_px < 3)
						g = 255;
					break;
				}
				case Generator::ramp:
					g = static_cast<std::uint8_t>((x + y + seq) & 0xFF);
					break;
				case Generator::noise:
					g = static_cast<std::uint8_t>(rng());
					break;
				default:
					break;
				}
				if (bpp == 3) {
					out[o++] = g;
					out[o++] = static_cast<std::uint8_t>(255 - g);
					out[o++] = static_cast<std::uint8_t>(x * 255 / std::max<std::uint32_t>(1, v.width_px - 1));
				} else {
					out[o++] = g;
				}
			}
		}
		return out;
	}

	Generator gen_;
	double freq_;
	double amp_ = 0.5;
	double phase_ = 0.0;
	std::uint64_t seed_;
	std::optional<std::uint64_t> fail_after_;
};

// Raw frames read sequentially from a file or character device.
class DeviceSource final : public Source {
public:
	DeviceSource(StreamDescriptor desc, std::filesystem::path path)
	    : Source(std::move(desc)), path_(std::move(path))
	{
	}

	SourceStatus probe() override
	{
		std::error_code ec;
		if (!std::filesystem::exists(path_, ec))
			return status(SourceState::absent, "no device at " + path_.string());
		std::ifstream in(path_, std::ios::binary);
		if (!in)
			return status(SourceState::error, "cannot open " + path_.string());
		return status(SourceState::present, path_.string());
	}

	Bytes produce(std::uint64_t) override
	{
		if (!in_.is_open()) {
			in_.open(path_, std::ios::binary);
			if (!in_)
				throw SourceFailure("device vanished: " + path_.string());
		}
		Bytes out(frame_payload_bytes(desc_));
		in_.read(reinterpret_cast<char *>(out.data()), static_cast<std::streamsize>(out.size()));
		if (static_cast<std::size_t>(in_.gcount()) != out.size())
			throw SourceFailure("device vanished: " + path_.string());
		return out;
	}

private:
	std::filesystem::path path_;
	std::ifstream in_;
};

} // namespace

std::unique_ptr<Source> make_source(const StreamDescriptor &desc, std::uint64_t seed)
{
	if (!is_media(desc.kind))
		return nullptr;
	auto b = Binding::parse(desc.device_binding);
	if (b.scheme == "synthetic") {
		double freq = 0;
		auto gen = parse_generator(b.target, freq);
		if (!gen)
			return nullptr;
		return std::make_unique<SyntheticSource>(desc, b, *gen, freq, seed);
	}
	if (b.scheme == "device" && !b.target.empty())
		return std::make_unique<DeviceSource>(desc, b.target);
	return nullptr;
}

std::vector<SourceStatus> probe_sources(const std::vector<StreamDescriptor> &config,
                                        const SourceFactory &factory)
{
	std::vector<SourceStatus> out;
	out.reserve(config.size());
	for (const auto &d : config) {
		SourceStatus s{d.stream_id, SourceState::absent, "", std::nullopt};
		auto b = Binding::parse(d.device_binding);
		if (d.kind == StreamKind::meta) {
			if (b.scheme == "session") {
				s.state = SourceState::present;
				s.detail = "session log";
			} else {
				s.detail = "unknown binding '" + d.device_binding + "'";
			}
		} else if (d.kind == StreamKind::vad_events) {
			std::optional<std::uint32_t> ref;
			if (b.scheme == "vad") {
				std::uint32_t id = 0;
				auto [p, ec] = std::from_chars(b.target.data(), b.target.data() + b.target.size(), id);
				if (ec == std::errc() && p == b.target.data() + b.target.size())
					ref = id;
			}
			auto it = std::find_if(config.begin(), config.end(), [&](const StreamDescriptor &o) {
				return ref && o.stream_id == *ref && o.kind == StreamKind::audio;
			});
			if (it != config.end()) {
				s.state = SourceState::present;
				s.detail = "vad on stream " + std::to_string(*ref);
			} else {
				s.detail = "vad binding must name an audio stream";
			}
		} else {
			std::unique_ptr<Source> src;
			try {
				src = factory ? factory(d) : make_source(d);
			} catch (const ConfigError &e) {
				s.state = SourceState::error;
				s.detail = e.what();
			}
			if (src)
				s = src->probe();
			else if (s.state != SourceState::error)
				s.detail = "unknown binding '" + d.device_binding + "'";
		}
		s.stream_id = d.stream_id;
		out.push_back(std::move(s));
	}
	return out;
}

bool RealtimePacer::wait_until(std::int64_t t_ns, std::stop_token stop)
{
	std::unique_lock lock(mutex_);
	while (!stop.stop_requested()) {
		auto now = clock_.now_ns();
		if (now >= t_ns)
			return true;
		cv_.wait_for(lock, stop, std::chrono::nanoseconds(t_ns - now), [] { return false; });
	}
	return false;
}

bool SimulatedPacer::wait_until(std::int64_t t_ns, std::stop_token stop)
{
	if (stop.stop_requested() || t_ns >= end_ns_)
		return false;
	if (clock_.now_ns() < t_ns)
		clock_.set(t_ns);
	return true;
}

RunResult run_source(Source &source, const FrameSink &sink, Pacer &pacer, std::int64_t start_ns,
                     std::stop_token stop)
{
	const auto &desc = source.descriptor();
	const auto period = frame_period_ns(desc);
	if (period <= 0)
		throw PreconditionError("run_source: stream " + std::to_string(desc.stream_id) +
		                        " is not a periodic media stream");
	RunResult r;
	r.status = SourceStatus{desc.stream_id, SourceState::present, "", std::nullopt};
	for (std::uint64_t seq = 0;; ++seq) {
		const std::int64_t t = start_ns + static_cast<std::int64_t>(seq) * period;
		if (!pacer.wait_until(t, stop))
			break;
		Bytes payload;
		try {
			payload = source.produce(seq);
		} catch (const SourceFailure &e) {
			r.status.state = SourceState::error;
			r.status.detail = e.what();
			break;
		}
		sink(MediaFrame{desc.stream_id, seq, t, std::move(payload)});
		r.frames_emitted++;
		r.final_seq = seq;
		r.status.last_frame_at_ns = t;
	}
	return r;
}

void FrameQueue::push(MediaFrame frame)
{
	std::lock_guard lock(mutex_);
	if (capacity_ == 0) {
		dropped_++;
		return;
	}
	while (frames_.size() >= capacity_) {
		frames_.pop_front();
		dropped_++;
	}
	frames_.push_back(std::move(frame));
}

std::vector<MediaFrame> FrameQueue::drain()
{
	std::lock_guard lock(mutex_);
	std::vector<MediaFrame> out(std::make_move_iterator(frames_.begin()),
	                            std::make_move_iterator(frames_.end()));
	frames_.clear();
	return out;
}

std::uint64_t FrameQueue::take_dropped()
{
	std::lock_guard lock(mutex_);
	return std::exchange(dropped_, 0);
}

std::size_t FrameQueue::size() const
{
	std::lock_guard lock(mutex_);
	return frames_.size();
}

std::size_t queue_capacity_for(const StreamDescriptor &desc)
{
	auto period = frame_period_ns(desc);
	if (period <= 0)
		return 256;
	return static_cast<std::size_t>(std::max<std::int64_t>(1, 2 * kNsPerSec / period));
}

std::vector<float> s16le_to_float(ByteView payload)
{
	std::vector<float> out(payload.size() / 2);
	for (std::size_t i = 0; i < out.size(); ++i) {
		auto v = static_cast<std::int16_t>(payload[2 * i] | (payload[2 * i + 1] << 8));
		out[i] = static_cast<float>(v) / 32768.0f;
	}
	return out;
}

Bytes float_to_s16le(std::span<const float> samples)
{
	Bytes out(samples.size() * 2);
	for (std::size_t i = 0; i < samples.size(); ++i) {
		double v = std::round(static_cast<double>(samples[i]) * 32768.0);
		put_s16le(out, 2 * i, static_cast<std::int16_t>(std::clamp(v, -32768.0, 32767.0)));
	}
	return out;
}

std::vector<float> s16le_channel(ByteView payload, std::uint16_t channels, std::uint16_t channel)
{
	if (channels == 0 || channel >= channels)
		throw PreconditionError("s16le_channel: channel out of range");
	const std::size_t frames = payload.size() / (2u * channels);
	std::vector<float> out(frames);
	for (std::size_t i = 0; i < frames; ++i) {
		const std::size_t at = (i * channels + channel) * 2;
		auto v = static_cast<std::int16_t>(payload[at] | (payload[at + 1] << 8));
		out[i] = static_cast<float>(v) / 32768.0f;
	}
	return out;
}

double rms_dbfs(std::span<const float> samples)
{
	if (samples.empty())
		return -std::numeric_limits<double>::infinity();
	double acc = 0;
	for (float s : samples)
		acc += static_cast<double>(s) * s;
	double rms = std::sqrt(acc / static_cast<double>(samples.size()));
	if (rms <= 0)
		return -std::numeric_limits<double>::infinity();
	return 20.0 * std::log10(rms);
}

StreamingVad::StreamingVad(std::uint32_t sample_rate_hz, VadParams params)
    : rate_(sample_rate_hz), params_(params)
{
	if (params_.frame_ms < 10 || params_.frame_ms > 100)
		throw ConfigError("vad.frame_ms must lie in [10, 100]");
	if (rate_ == 0)
		throw ConfigError("vad.sample_rate_hz must be positive");
	frame_len_ = static_cast<std::size_t>(rate_) * params_.frame_ms / 1000;
	if (frame_len_ == 0)
		throw ConfigError("vad frame holds no samples at this rate");
	buffer_.reserve(frame_len_);
}

Segment StreamingVad::make_segment() const
{
	const double frame_s = static_cast<double>(frame_len_) / rate_;
	return Segment{static_cast<double>(*seg_start_) * frame_s,
	               static_cast<double>(last_marked_ + 1) * frame_s};
}

void StreamingVad::classify_frame()
{
	const bool active = rms_dbfs(buffer_) >= params_.threshold_dbfs;
	const auto idx = frame_index_++;
	buffer_.clear();
	if (active) {
		if (!seg_start_)
			seg_start_ = idx;
		last_marked_ = idx;
		hang_ = 0;
		return;
	}
	if (!seg_start_)
		return;
	if (hang_ < params_.hangover_frames) {
		hang_++;
		last_marked_ = idx;
		return;
	}
	out_.push_back(make_segment());
	seg_start_.reset();
	hang_ = 0;
}

std::vector<Segment> StreamingVad::push(std::span<const float> samples)
{
	for (float s : samples) {
		buffer_.push_back(s);
		if (buffer_.size() == frame_len_)
			classify_frame();
	}
	return std::exchange(out_, {});
}

std::vector<Segment> StreamingVad::finish()
{
	if (seg_start_) {
		out_.push_back(make_segment());
		seg_start_.reset();
	}
	buffer_.clear();
	return std::exchange(out_, {});
}

std::vector<Segment> vad_segments(std::span<const float> pcm, std::uint32_t sample_rate_hz,
                                  const VadParams &params)
{
	StreamingVad vad(sample_rate_hz, params);
	if (pcm.empty())
		return {};
	if (pcm.size() < static_cast<std::size_t>(sample_rate_hz) * params.frame_ms / 1000)
		throw PreconditionError("vad_segments: signal shorter than one frame");
	auto out = vad.push(pcm);
	auto tail = vad.finish();
	out.insert(out.end(), tail.begin(), tail.end());
	return out;
}

VadParams vad_params_from_binding(const Binding &b)
{
	VadParams p;
	p.frame_ms = static_cast<std::uint32_t>(b.number("frame_ms", 30));
	p.threshold_dbfs = b.number("threshold_db", -40.0);
	p.hangover_frames = static_cast<std::uint32_t>(b.number("hangover", 10));
	if (p.frame_ms < 10 || p.frame_ms > 100)
		throw ConfigError("device_binding: vad frame_ms must lie in [10, 100]");
	return p;
}

} // namespace cusco::streams
