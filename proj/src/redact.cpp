#include "cusco/redact.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <sodium.h>

#include "cusco/session.hpp"

namespace cusco::redact {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double rel_seconds(std::int64_t t_ns, std::int64_t origin_ns)
{
	return static_cast<double>(t_ns - origin_ns) / kNsPerSec;
}

std::string file_sha256(const fs::path &p)
{
	std::ifstream in(p, std::ios::binary);
	if (!in)
		throw IoError("cannot read " + p.string());
	crypto_hash_sha256_state st;
	crypto_hash_sha256_init(&st);
	std::vector<char> buf(1 << 16);
	while (in) {
		in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
		crypto_hash_sha256_update(&st, reinterpret_cast<const unsigned char *>(buf.data()),
		                          static_cast<unsigned long long>(in.gcount()));
	}
	std::array<std::uint8_t, crypto_hash_sha256_BYTES> out{};
	crypto_hash_sha256_final(&st, out.data());
	return to_hex(out);
}

bool is_visual(StreamKind k) { return k == StreamKind::video || k == StreamKind::depth; }

std::uint32_t channels_of(const VideoParams &p) { return p.pixel_format == "rgb24" ? 3 : 1; }
std::uint32_t full_scale(const VideoParams &p) { return p.pixel_format == "gray16le" ? 65535 : 255; }

std::uint32_t read_px(ByteView d, const VideoParams &p, std::size_t pixel, std::uint32_t ch)
{
	if (p.pixel_format == "gray16le")
		return static_cast<std::uint32_t>(d[2 * pixel] | (d[2 * pixel + 1] << 8));
	return d[pixel * channels_of(p) + ch];
}

void write_px(Bytes &d, const VideoParams &p, std::size_t pixel, std::uint32_t ch, std::uint32_t v)
{
	if (p.pixel_format == "gray16le") {
		d[2 * pixel] = static_cast<std::uint8_t>(v & 0xFF);
		d[2 * pixel + 1] = static_cast<std::uint8_t>(v >> 8);
	} else {
		d[pixel * channels_of(p) + ch] = static_cast<std::uint8_t>(v);
	}
}

constexpr std::string_view kRedactionKey = "redaction";

std::vector<RedactionEntry> entries_for(const RedactionList &list, std::uint32_t stream_id)
{
	std::vector<RedactionEntry> out;
	for (const auto &e : list.entries)
		if (e.stream_id == stream_id)
			out.push_back(e);
	return out;
}

} // namespace

// ---------------------------------------------------------------------------

json to_json(const RedactionEntry &e)
{
	json j = {{"stream_id", e.stream_id}, {"t_start_s", e.t_start_s}, {"t_end_s", e.t_end_s}};
	if (e.region)
		j["region"] = {{"x", e.region->x}, {"y", e.region->y}, {"w", e.region->w}, {"h", e.region->h}};
	return j;
}

RedactionEntry entry_from_json(const json &j)
{
	try {
		RedactionEntry e;
		e.stream_id = j.at("stream_id").get<std::uint32_t>();
		e.t_start_s = j.at("t_start_s").get<double>();
		e.t_end_s = j.at("t_end_s").get<double>();
		if (j.contains("region") && !j["region"].is_null()) {
			const auto &r = j["region"];
			e.region = Rect{r.at("x").get<std::uint32_t>(), r.at("y").get<std::uint32_t>(),
			                r.at("w").get<std::uint32_t>(), r.at("h").get<std::uint32_t>()};
		}
		return e;
	} catch (const json::exception &ex) {
		throw ConfigError(std::string("redaction entry: ") + ex.what());
	}
}

RedactionList RedactionList::from_json(const json &j)
{
	RedactionList l;
	try {
		l.session_id = Uuid::parse(j.at("session_id").get<std::string>());
		const auto &entries = j.at("entries");
		if (!entries.is_array())
			throw ConfigError("redaction list: entries must be an array");
		for (std::size_t i = 0; i < entries.size(); ++i) {
			try {
				l.entries.push_back(entry_from_json(entries[i]));
			} catch (const ConfigError &e) {
				throw ConfigError("entries[" + std::to_string(i) + "]: " + e.what());
			}
		}
	} catch (const json::exception &ex) {
		throw ConfigError(std::string("redaction list: ") + ex.what());
	} catch (const FormatError &ex) {
		throw ConfigError(std::string("redaction list: ") + ex.what());
	}
	return l;
}

RedactionList RedactionList::load(const fs::path &path)
{
	std::ifstream in(path);
	if (!in)
		throw IoError("cannot read " + path.string());
	try {
		return from_json(json::parse(in));
	} catch (const json::parse_error &e) {
		throw ConfigError(path.string() + ": " + e.what());
	}
}

json RedactionList::to_json() const
{
	json e = json::array();
	for (const auto &x : entries)
		e.push_back(redact::to_json(x));
	return {{"session_id", session_id.str()}, {"entries", e}};
}

void validate(const RedactionList &list, const container::ContainerHeader &header)
{
	if (list.session_id != header.session.session_id)
		throw ConfigError("redaction list is for session " + list.session_id.str() + ", container holds " +
		                  header.session.session_id.str());
	for (std::size_t i = 0; i < list.entries.size(); ++i) {
		const auto &e = list.entries[i];
		const auto where = "entries[" + std::to_string(i) + "]: ";
		const StreamDescriptor *d = nullptr;
		for (const auto &s : header.stream_table)
			if (s.stream_id == e.stream_id)
				d = &s;
		if (!d)
			throw ConfigError(where + "unknown stream " + std::to_string(e.stream_id));
		if (!is_media(d->kind))
			throw ConfigError(where + "stream " + std::to_string(e.stream_id) + " is not audio or video");
		if (!(e.t_start_s < e.t_end_s) || !std::isfinite(e.t_start_s) || !std::isfinite(e.t_end_s))
			throw ConfigError(where + "t_start_s must be less than t_end_s");
		if (d->kind == StreamKind::audio && e.region)
			throw ConfigError(where + "audio entries take no region");
		if (is_visual(d->kind)) {
			if (!e.region)
				throw ConfigError(where + "video entries need a region");
			const auto &r = *e.region;
			const auto &v = *d->video;
			if (r.w == 0 || r.h == 0 || std::uint64_t(r.x) + r.w > v.width_px || std::uint64_t(r.y) + r.h > v.height_px)
				throw ConfigError(where + "region " + std::to_string(r.x) + "," + std::to_string(r.y) + " " +
				                  std::to_string(r.w) + "x" + std::to_string(r.h) + " lies outside the " +
				                  std::to_string(v.width_px) + "x" + std::to_string(v.height_px) + " frame");
		}
	}
}

bool RedactionReport::pass() const
{
	for (const auto &e : entries)
		if (!e.verified)
			return false;
	return true;
}

json RedactionReport::to_json(const RedactionList &list) const
{
	json arr = json::array();
	for (std::size_t i = 0; i < entries.size(); ++i) {
		const auto &r = entries[i];
		json m = nullptr;
		if (r.metric && std::isfinite(*r.metric))
			m = *r.metric;
		json j = {{"applied", r.applied}, {"verified", r.verified}, {"metric", m}};
		if (i < list.entries.size())
			j["entry"] = redact::to_json(list.entries[i]);
		if (!r.detail.empty())
			j["detail"] = r.detail;
		arr.push_back(j);
	}
	return {{"pass", pass()}, {"entries", arr}};
}

void RedactOptions::validate() const
{
	if (kernel < 3 || kernel % 2 == 0)
		throw ConfigError("blur kernel must be odd and at least 3");
	if (ramp_s < 0 || ramp_s > 1)
		throw ConfigError("ramp must lie in [0, 1] s");
}

// ---------------------------------------------------------------------------

double silence_gain(std::span<const RedactionEntry> entries, double t, double ramp_s)
{
	double g = 1.0;
	for (const auto &e : entries) {
		if (!e.covers(t))
			continue;
		double h = 0.0;
		if (ramp_s > 0) {
			const double down = 1.0 - (t - e.t_start_s) / ramp_s;
			const double up = (t - (e.t_end_s - ramp_s)) / ramp_s;
			h = std::clamp(std::max(down, up), 0.0, 1.0);
		}
		g *= h;
	}
	return g;
}

std::vector<std::uint32_t> box_blur(const std::vector<std::uint32_t> &plane, std::uint32_t w, std::uint32_t h,
                                    std::uint32_t k)
{
	const std::int64_t r = k / 2;
	const std::int64_t pw = w + 2 * r, ph = h + 2 * r;
	// Summed-area table over the edge-clamped, padded plane.
	std::vector<std::uint64_t> sat(static_cast<std::size_t>((pw + 1) * (ph + 1)), 0);
	auto at = [&](std::int64_t x, std::int64_t y) -> std::uint64_t & {
		return sat[static_cast<std::size_t>(y * (pw + 1) + x)];
	};
	for (std::int64_t y = 0; y < ph; ++y) {
		const auto sy = std::clamp<std::int64_t>(y - r, 0, h - 1);
		std::uint64_t row = 0;
		for (std::int64_t x = 0; x < pw; ++x) {
			const auto sx = std::clamp<std::int64_t>(x - r, 0, w - 1);
			row += plane[static_cast<std::size_t>(sy * w + sx)];
			at(x + 1, y + 1) = at(x + 1, y) + row;
		}
	}
	const std::uint64_t area = std::uint64_t(k) * k;
	std::vector<std::uint32_t> out(plane.size());
	for (std::int64_t y = 0; y < h; ++y)
		for (std::int64_t x = 0; x < w; ++x) {
			const auto sum = at(x + k, y + k) - at(x, y + k) - at(x + k, y) + at(x, y);
			out[static_cast<std::size_t>(y * w + x)] = static_cast<std::uint32_t>((sum + area / 2) / area);
		}
	return out;
}

void blur_regions(Bytes &payload, const VideoParams &p, std::span<const Rect> regions, std::uint32_t k)
{
	if (regions.empty())
		return;
	const auto w = p.width_px, h = p.height_px;
	const std::size_t n = std::size_t(w) * h;
	const Bytes original = payload;
	for (std::uint32_t ch = 0; ch < channels_of(p); ++ch) {
		std::vector<std::uint32_t> plane(n);
		for (std::size_t i = 0; i < n; ++i)
			plane[i] = read_px(original, p, i, ch);
		const auto blurred = box_blur(plane, w, h, k);
		for (const auto &r : regions)
			for (std::uint32_t y = r.y; y < r.y + r.h; ++y)
				for (std::uint32_t x = r.x; x < r.x + r.w; ++x) {
					const auto i = std::size_t(y) * w + x;
					write_px(payload, p, i, ch, blurred[i]);
				}
	}
}

std::uint32_t max_neighbour_diff(ByteView payload, const VideoParams &p, const Rect &r)
{
	std::uint32_t worst = 0;
	const auto w = p.width_px;
	for (std::uint32_t ch = 0; ch < channels_of(p); ++ch)
		for (std::uint32_t y = r.y; y < r.y + r.h; ++y)
			for (std::uint32_t x = r.x; x < r.x + r.w; ++x) {
				const auto v = read_px(payload, p, std::size_t(y) * w + x, ch);
				if (x + 1 < r.x + r.w) {
					const auto u = read_px(payload, p, std::size_t(y) * w + x + 1, ch);
					worst = std::max(worst, v > u ? v - u : u - v);
				}
				if (y + 1 < r.y + r.h) {
					const auto u = read_px(payload, p, std::size_t(y + 1) * w + x, ch);
					worst = std::max(worst, v > u ? v - u : u - v);
				}
			}
	return worst;
}

std::uint32_t smoothness_bound(const VideoParams &p, std::uint32_t k) { return (full_scale(p) + k - 1) / k + 1; }

// ---------------------------------------------------------------------------

namespace {

std::vector<RedactionEntry> parse_attached(ByteView payload)
{
	std::vector<RedactionEntry> out;
	std::string_view text(reinterpret_cast<const char *>(payload.data()), payload.size());
	std::size_t pos = 0;
	while (pos < text.size()) {
		auto nl = text.find('\n', pos);
		auto line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
		pos = nl == std::string_view::npos ? text.size() : nl + 1;
		if (line.empty())
			continue;
		auto j = json::parse(line, nullptr, false);
		if (j.is_object() && j.contains(kRedactionKey))
			out.push_back(entry_from_json(j[std::string(kRedactionKey)]));
	}
	return out;
}

const StreamDescriptor *meta_stream(const container::ContainerHeader &h)
{
	for (const auto &s : h.stream_table)
		if (s.kind == StreamKind::meta)
			return &s;
	return nullptr;
}

struct Accumulator {
	double energy = 0;
	std::uint64_t samples = 0;
	std::uint32_t worst_diff = 0;
	std::uint64_t frames = 0;
};

RedactionReport verify_chunks(container::ContainerReader &reader, const RedactionList &list, const RedactOptions &opts)
{
	const auto &header = reader.header();
	const auto origin = header.session.time_origin_ns;
	std::vector<Accumulator> acc(list.entries.size());
	while (auto chunk = reader.next()) {
		const auto &d = header.stream(chunk->record.stream_id);
		for (std::size_t i = 0; i < list.entries.size(); ++i) {
			const auto &e = list.entries[i];
			if (e.stream_id != d.stream_id)
				continue;
			for (const auto &f : chunk->frames) {
				const double t0 = rel_seconds(f.t_capture_ns, origin);
				if (d.kind == StreamKind::audio) {
					const auto &a = *d.audio;
					const auto n = f.payload.size() / (2 * a.channels);
					for (std::size_t s = 0; s < n; ++s) {
						const double t = t0 + static_cast<double>(s) / a.sample_rate_hz;
						if (t < e.t_start_s + opts.ramp_s || t >= e.t_end_s - opts.ramp_s)
							continue;
						for (std::uint16_t c = 0; c < a.channels; ++c) {
							const auto k = 2 * (s * a.channels + c);
							const double x = static_cast<std::int16_t>(f.payload[k] | (f.payload[k + 1] << 8)) / 32768.0;
							acc[i].energy += x * x;
							acc[i].samples++;
						}
					}
				} else if (is_visual(d.kind) && e.covers(t0) && e.region) {
					acc[i].worst_diff = std::max(acc[i].worst_diff, max_neighbour_diff(f.payload, *d.video, *e.region));
					acc[i].frames++;
				}
			}
		}
	}
	RedactionReport rep;
	for (std::size_t i = 0; i < list.entries.size(); ++i) {
		const auto &d = header.stream(list.entries[i].stream_id);
		EntryResult r;
		if (d.kind == StreamKind::audio) {
			if (acc[i].samples == 0) {
				r.verified = true;
				r.detail = "no recorded samples inside the interval";
			} else {
				const double rms = std::sqrt(acc[i].energy / static_cast<double>(acc[i].samples));
				r.metric = rms > 0 ? 20 * std::log10(rms) : -std::numeric_limits<double>::infinity();
				r.verified = *r.metric <= opts.max_rms_dbfs;
				if (rms == 0)
					r.detail = "digital silence";
			}
		} else {
			if (acc[i].frames == 0) {
				r.verified = true;
				r.detail = "no recorded frames inside the interval";
			} else {
				r.metric = acc[i].worst_diff;
				const auto bound = smoothness_bound(*d.video, opts.kernel);
				r.verified = acc[i].worst_diff <= bound;
				if (!r.verified)
					r.detail = "neighbour step " + std::to_string(acc[i].worst_diff) + " exceeds " + std::to_string(bound);
			}
		}
		rep.entries.push_back(r);
	}
	return rep;
}

} // namespace

RedactionList attached_list(const fs::path &container, const crypto::SecretKey &priv)
{
	auto reader = container::ContainerReader::open(container, priv);
	RedactionList l;
	l.session_id = reader.header().session.session_id;
	const auto *meta = meta_stream(reader.header());
	if (!meta)
		return l;
	while (auto chunk = reader.next()) {
		if (chunk->record.stream_id != meta->stream_id)
			continue;
		for (const auto &f : chunk->frames)
			for (auto &e : parse_attached(f.payload))
				l.entries.push_back(std::move(e));
	}
	return l;
}

RedactionReport verify_redactions(const fs::path &container, const crypto::SecretKey &priv, const RedactionList &list,
                                  const RedactOptions &opts)
{
	opts.validate();
	auto reader = container::ContainerReader::open(container, priv);
	validate(list, reader.header());
	return verify_chunks(reader, list, opts);
}

RedactionReport apply_redactions(const fs::path &in, const crypto::SecretKey &priv, const RedactionList &list,
                                 const fs::path &out, const crypto::PublicKey &recipient, const RedactOptions &opts)
{
	opts.validate();
	const auto already = attached_list(in, priv).entries;
	auto reader = container::ContainerReader::open(in, priv);
	const auto header = reader.header();
	validate(list, header);

	RedactionList todo;
	todo.session_id = list.session_id;
	std::vector<bool> skipped(list.entries.size(), false);
	for (std::size_t i = 0; i < list.entries.size(); ++i) {
		const auto &e = list.entries[i];
		const bool seen = std::find(already.begin(), already.end(), e) != already.end() ||
		                  std::find(todo.entries.begin(), todo.entries.end(), e) != todo.entries.end();
		skipped[i] = seen;
		if (!seen)
			todo.entries.push_back(e);
	}

	auto streams = header.stream_table;
	const StreamDescriptor *meta = meta_stream(header);
	std::uint32_t meta_id;
	if (meta) {
		meta_id = meta->stream_id;
	} else {
		StreamDescriptor d;
		d.stream_id = static_cast<std::uint32_t>(streams.size());
		d.kind = StreamKind::meta;
		d.label = "meta";
		d.device_binding = "session";
		streams.push_back(d);
		meta_id = d.stream_id;
	}

	container::WriterOptions wopts;
	wopts.chunk = header.chunk_params;
	wopts.sync_each_chunk = opts.sync_each_chunk;
	auto writer = container::ContainerWriter::create(out, recipient, header.session, streams, wopts);

	const auto origin = header.session.time_origin_ns;
	std::int64_t last_t = origin;
	std::optional<std::int64_t> meta_last_t;
	std::uint64_t meta_next_seq = 0;
	while (auto chunk = reader.next()) {
		const auto &d = header.stream(chunk->record.stream_id);
		const auto mine = entries_for(todo, d.stream_id);
		for (auto &f : chunk->frames) {
			if (mine.empty())
				break;
			const double t0 = rel_seconds(f.t_capture_ns, origin);
			if (d.kind == StreamKind::audio) {
				const auto &a = *d.audio;
				const auto n = f.payload.size() / (2 * a.channels);
				for (std::size_t s = 0; s < n; ++s) {
					const double g = silence_gain(mine, t0 + static_cast<double>(s) / a.sample_rate_hz, opts.ramp_s);
					if (g >= 1.0)
						continue;
					for (std::uint16_t c = 0; c < a.channels; ++c) {
						const auto k = 2 * (s * a.channels + c);
						const auto x = static_cast<std::int16_t>(f.payload[k] | (f.payload[k + 1] << 8));
						const auto y = static_cast<std::int16_t>(std::lround(x * g));
						f.payload[k] = static_cast<std::uint8_t>(y & 0xFF);
						f.payload[k + 1] = static_cast<std::uint8_t>((static_cast<std::uint16_t>(y) >> 8) & 0xFF);
					}
				}
			} else if (is_visual(d.kind)) {
				std::vector<Rect> regions;
				for (const auto &e : mine)
					if (e.covers(t0))
						regions.push_back(*e.region);
				blur_regions(f.payload, *d.video, regions, opts.kernel);
			}
		}
		if (d.stream_id == meta_id) {
			meta_last_t = chunk->record.t_end_ns;
			meta_next_seq = chunk->frames.back().seq + 1;
		}
		last_t = std::max(last_t, chunk->record.t_end_ns);
		writer.append_chunk(d.stream_id, chunk->frames);
	}

	if (!todo.entries.empty()) {
		std::string lines;
		for (const auto &e : todo.entries)
			lines += json{{std::string(kRedactionKey), to_json(e)}, {"kernel", opts.kernel}, {"ramp_s", opts.ramp_s}}.dump() + "\n";
		MediaFrame f{meta_id, meta_next_seq, std::max(last_t, meta_last_t.value_or(last_t)),
		             Bytes(lines.begin(), lines.end())};
		writer.append_chunk(meta_id, std::span(&f, 1));
	}
	writer.finalize();

	RedactionReport rep;
	if (crypto::public_from_private(priv) == recipient) {
		rep = verify_redactions(out, priv, list, opts);
	} else {
		// Sealed for someone else: nothing here can read it back.
		rep.entries.assign(list.entries.size(), EntryResult{false, false, std::nullopt, "output sealed for another key"});
	}
	for (std::size_t i = 0; i < rep.entries.size(); ++i) {
		rep.entries[i].applied = true;
		auto &d = rep.entries[i].detail;
		if (skipped[i])
			d = d.empty() ? "already applied" : "already applied; " + d;
	}
	return rep;
}

// ---------------------------------------------------------------------------

Verification verify_for_export(const fs::path &container, const crypto::SecretKey &priv, bool attest_no_redactions,
                               const RedactOptions &opts)
{
	Verification v;
	v.path_ = container;
	v.digest_ = file_sha256(container);
	v.list_ = attached_list(container, priv);
	v.report_ = verify_redactions(container, priv, v.list_, opts);
	v.attested_empty_ = attest_no_redactions && v.list_.entries.empty();
	return v;
}

namespace {

void put_le(std::ofstream &o, std::uint32_t v, int bytes)
{
	for (int i = 0; i < bytes; ++i)
		o.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string safe_label(const std::string &label)
{
	std::string out;
	for (char c : label)
		out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' ? c : '_';
	return out.empty() ? "stream" : out;
}

} // namespace

ExportResult export_plain(const Verification &v, const crypto::SecretKey &priv, const fs::path &out_dir)
{
	if (!v.pass()) {
		if (v.list_.entries.empty() && !v.attested_empty_)
			throw PreconditionError("no redaction list is attached; attest that none is needed to export");
		throw PreconditionError("redaction verification failed; refusing to export");
	}
	if (file_sha256(v.path_) != v.digest_)
		throw PreconditionError("container changed since it was verified");

	auto reader = container::ContainerReader::open(v.path_, priv);
	const auto header = reader.header();
	const auto origin = header.session.time_origin_ns;
	std::vector<std::vector<MediaFrame>> per_stream(header.stream_table.size());
	while (auto chunk = reader.next())
		for (auto &f : chunk->frames)
			per_stream[chunk->record.stream_id].push_back(std::move(f));

	fs::create_directories(out_dir);
	ExportResult res;
	auto record_file = [&](const std::string &name, std::uint32_t id) {
		const auto path = out_dir / name;
		std::ifstream in(path, std::ios::binary);
		Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
		res.files.push_back({name, id, data.size(), crypto::sha256_hex(data)});
	};

	for (const auto &d : header.stream_table) {
		const auto &frames = per_stream[d.stream_id];
		const auto base = "stream" + std::to_string(d.stream_id) + "_" + safe_label(d.label);
		if (d.kind == StreamKind::audio) {
			const auto &a = *d.audio;
			std::uint64_t data_bytes = 0;
			for (const auto &f : frames)
				data_bytes += f.payload.size();
			const auto name = base + ".wav";
			std::ofstream o(out_dir / name, std::ios::binary);
			o.write("RIFF", 4);
			put_le(o, static_cast<std::uint32_t>(36 + data_bytes), 4);
			o.write("WAVEfmt ", 8);
			put_le(o, 16, 4);
			put_le(o, 1, 2);
			put_le(o, a.channels, 2);
			put_le(o, a.sample_rate_hz, 4);
			put_le(o, a.sample_rate_hz * a.channels * 2, 4);
			put_le(o, a.channels * 2, 2);
			put_le(o, 16, 2);
			o.write("data", 4);
			put_le(o, static_cast<std::uint32_t>(data_bytes), 4);
			for (const auto &f : frames)
				o.write(reinterpret_cast<const char *>(f.payload.data()), static_cast<std::streamsize>(f.payload.size()));
			if (!o)
				throw IoError("cannot write " + (out_dir / name).string());
			o.close();
			record_file(name, d.stream_id);
		} else if (is_visual(d.kind)) {
			const auto &p = *d.video;
			const auto name = base + ".raw";
			std::ofstream o(out_dir / name, std::ios::binary);
			json jf = json::array();
			const std::size_t n = std::size_t(p.width_px) * p.height_px;
			for (const auto &f : frames) {
				if (p.pixel_format == "rgb24") {
					Bytes planar(f.payload.size());
					for (std::size_t c = 0; c < 3; ++c)
						for (std::size_t i = 0; i < n; ++i)
							planar[c * n + i] = f.payload[3 * i + c];
					o.write(reinterpret_cast<const char *>(planar.data()), static_cast<std::streamsize>(planar.size()));
				} else {
					o.write(reinterpret_cast<const char *>(f.payload.data()), static_cast<std::streamsize>(f.payload.size()));
				}
				jf.push_back({{"seq", f.seq}, {"t_s", rel_seconds(f.t_capture_ns, origin)}});
			}
			if (!o)
				throw IoError("cannot write " + (out_dir / name).string());
			o.close();
			record_file(name, d.stream_id);
			const auto side = base + ".json";
			std::ofstream s(out_dir / side);
			s << json{{"width", p.width_px}, {"height", p.height_px}, {"pixel_format", p.pixel_format},
			          {"fps", p.fps}, {"layout", "planar"}, {"frames", jf}}
			         .dump(1)
			  << "\n";
			s.close();
			record_file(side, d.stream_id);
		} else {
			const auto name = base + ".jsonl";
			std::ofstream o(out_dir / name, std::ios::binary);
			for (const auto &f : frames) {
				o.write(reinterpret_cast<const char *>(f.payload.data()), static_cast<std::streamsize>(f.payload.size()));
				if (f.payload.empty() || f.payload.back() != '\n')
					o.put('\n');
			}
			o.close();
			record_file(name, d.stream_id);
		}
	}

	json files = json::array();
	for (const auto &f : res.files)
		files.push_back({{"name", f.name}, {"stream_id", f.stream_id}, {"bytes", f.bytes}, {"sha256", f.sha256}});
	json verification = v.report_.to_json(v.list_);
	verification["attested_no_redactions"] = v.attested_empty_;
	verification["container_sha256"] = v.digest_;
	res.manifest = out_dir / "manifest.json";
	std::ofstream m(res.manifest);
	m << json{{"schema", "cusco.export/1"}, {"session_id", header.session.session_id.str()},
	          {"verification", verification}, {"files", files}}
	         .dump(2)
	  << "\n";
	if (!m)
		throw IoError("cannot write " + res.manifest.string());
	return res;
}

ExportResult export_plain(const fs::path &container, const crypto::SecretKey &priv, const fs::path &out_dir,
                          bool attest_no_redactions, const RedactOptions &opts)
{
	return export_plain(verify_for_export(container, priv, attest_no_redactions, opts), priv, out_dir);
}

} // namespace cusco::redact
