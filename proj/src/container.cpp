#include "cusco/container.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <deque>
#include <set>

namespace cusco::container {

namespace {

constexpr std::size_t kPrefixBytes = 8 + 2 + 4;
constexpr std::uint32_t kMaxHeaderBytes = 16u << 20;
constexpr std::size_t kRecordHeadBytes = 8; // marker + body_len
constexpr std::size_t kBoundMetaBytes = 1 + 4 + 8 + 8 + 8 + 8;
constexpr std::size_t kFixedBodyBytes = kBoundMetaBytes + crypto::kNonceBytes + 4 + crypto::kTagBytes;
constexpr std::uint8_t kTypeChunk = 1;
constexpr std::uint8_t kTypeFooter = 2;
// Upper bound on how far ahead of the expected index a record may claim to be
// before we stop deriving keys for it.
constexpr std::uint64_t kMaxIndexSkip = 1u << 20;

enum HeaderTag : std::uint16_t {
	tag_project_id = 1,
	tag_session_id = 2,
	tag_created_at = 3,
	tag_time_origin = 4,
	tag_max_chunk_bytes = 5,
	tag_max_chunk_ms = 6,
	tag_recipient = 7,
	tag_wrapped_key = 8,
	tag_stream = 16,
};

enum StreamTag : std::uint16_t {
	stag_id = 1,
	stag_kind = 2,
	stag_label = 3,
	stag_binding = 4,
	stag_sample_rate = 5,
	stag_channels = 6,
	stag_sample_format = 7,
	stag_block_ms = 8,
	stag_width = 9,
	stag_height = 10,
	stag_fps = 11,
	stag_pixel_format = 12,
};

void put_field(Bytes &out, std::uint16_t tag, ByteView value)
{
	be::put_u16(out, tag);
	be::put_u32(out, static_cast<std::uint32_t>(value.size()));
	be::put_bytes(out, value);
}

void put_field_u64(Bytes &out, std::uint16_t tag, std::uint64_t v)
{
	Bytes tmp;
	be::put_u64(tmp, v);
	put_field(out, tag, tmp);
}

void put_field_u32(Bytes &out, std::uint16_t tag, std::uint32_t v)
{
	Bytes tmp;
	be::put_u32(tmp, v);
	put_field(out, tag, tmp);
}

void put_field_str(Bytes &out, std::uint16_t tag, const std::string &s)
{
	put_field(out, tag, ByteView(reinterpret_cast<const std::uint8_t *>(s.data()), s.size()));
}

Bytes encode_stream(const StreamDescriptor &d)
{
	Bytes out;
	put_field_u32(out, stag_id, d.stream_id);
	put_field(out, stag_kind, Bytes{static_cast<std::uint8_t>(d.kind)});
	put_field_str(out, stag_label, d.label);
	put_field_str(out, stag_binding, d.device_binding);
	if (d.audio) {
		put_field_u32(out, stag_sample_rate, d.audio->sample_rate_hz);
		put_field_u32(out, stag_channels, d.audio->channels);
		put_field_str(out, stag_sample_format, d.audio->sample_format);
		put_field_u32(out, stag_block_ms, d.audio->block_ms);
	}
	if (d.video) {
		put_field_u32(out, stag_width, d.video->width_px);
		put_field_u32(out, stag_height, d.video->height_px);
		put_field_u32(out, stag_fps, d.video->fps);
		put_field_str(out, stag_pixel_format, d.video->pixel_format);
	}
	return out;
}

std::uint32_t field_u32(ByteView v)
{
	if (v.size() != 4)
		throw FormatError("header field has wrong width");
	return be::load_u32(v.data());
}

std::uint64_t field_u64(ByteView v)
{
	if (v.size() != 8)
		throw FormatError("header field has wrong width");
	return be::load_u64(v.data());
}

StreamDescriptor decode_stream(ByteView body)
{
	StreamDescriptor d;
	bool have_id = false;
	bool have_kind = false;
	AudioParams audio;
	VideoParams video;
	bool any_audio = false;
	bool any_video = false;
	be::Reader r(body);
	while (!r.empty()) {
		auto tag = r.u16();
		auto value = r.bytes(r.u32());
		std::string text(value.begin(), value.end());
		switch (tag) {
		case stag_id:
			d.stream_id = field_u32(value);
			have_id = true;
			break;
		case stag_kind:
			if (value.size() != 1 || value[0] < 1 || value[0] > 5)
				throw FormatError("invalid stream kind in header");
			d.kind = static_cast<StreamKind>(value[0]);
			have_kind = true;
			break;
		case stag_label:
			d.label = text;
			break;
		case stag_binding:
			d.device_binding = text;
			break;
		case stag_sample_rate:
			audio.sample_rate_hz = field_u32(value);
			any_audio = true;
			break;
		case stag_channels:
			audio.channels = static_cast<std::uint16_t>(field_u32(value));
			any_audio = true;
			break;
		case stag_sample_format:
			audio.sample_format = text;
			any_audio = true;
			break;
		case stag_block_ms:
			audio.block_ms = field_u32(value);
			any_audio = true;
			break;
		case stag_width:
			video.width_px = field_u32(value);
			any_video = true;
			break;
		case stag_height:
			video.height_px = field_u32(value);
			any_video = true;
			break;
		case stag_fps:
			video.fps = field_u32(value);
			any_video = true;
			break;
		case stag_pixel_format:
			video.pixel_format = text;
			any_video = true;
			break;
		default:
			break; // unknown fields are skipped within a format version
		}
	}
	if (!have_id || !have_kind)
		throw FormatError("stream descriptor missing id or kind");
	if (any_audio)
		d.audio = audio;
	if (any_video)
		d.video = video;
	return d;
}

Bytes encode_header_body(const ContainerHeader &h)
{
	Bytes out;
	put_field(out, tag_project_id, h.session.project_id.bytes);
	put_field(out, tag_session_id, h.session.session_id.bytes);
	put_field_u64(out, tag_created_at, static_cast<std::uint64_t>(h.session.created_at_ns));
	put_field_u64(out, tag_time_origin, static_cast<std::uint64_t>(h.session.time_origin_ns));
	put_field_u64(out, tag_max_chunk_bytes, h.chunk_params.max_chunk_bytes);
	put_field_u64(out, tag_max_chunk_ms, h.chunk_params.max_chunk_duration_ms);
	put_field(out, tag_recipient, h.recipient);
	put_field(out, tag_wrapped_key, h.wrapped_session_key);
	for (const auto &s : h.stream_table)
		put_field(out, tag_stream, encode_stream(s));
	return out;
}

Bytes encode_header(const ContainerHeader &h)
{
	auto body = encode_header_body(h);
	Bytes out;
	be::put_bytes(out, kMagic);
	be::put_u16(out, h.format_version);
	be::put_u32(out, static_cast<std::uint32_t>(body.size()));
	be::put_bytes(out, body);
	return out;
}

ContainerHeader decode_header(ByteView file)
{
	if (file.size() < kMagic.size() || !std::equal(kMagic.begin(), kMagic.end(), file.begin()))
		throw FormatError("not a recording container (bad magic)");
	if (file.size() < kPrefixBytes)
		throw FormatError("unrecoverable: file ends inside the container header");
	ContainerHeader h;
	h.format_version = be::load_u16(file.data() + 8);
	if (h.format_version != kFormatVersion)
		throw FormatError("unsupported container format version " + std::to_string(h.format_version));
	auto body_len = be::load_u32(file.data() + 10);
	if (body_len > kMaxHeaderBytes)
		throw FormatError("container header length out of range");
	if (file.size() < kPrefixBytes + body_len)
		throw FormatError("unrecoverable: file ends inside the container header");

	bool have[9] = {};
	be::Reader r(file.subspan(kPrefixBytes, body_len));
	try {
		while (!r.empty()) {
			auto tag = r.u16();
			auto value = r.bytes(r.u32());
			switch (tag) {
			case tag_project_id:
			case tag_session_id: {
				if (value.size() != 16)
					throw FormatError("identifier field has wrong width");
				auto &id = tag == tag_project_id ? h.session.project_id : h.session.session_id;
				std::copy(value.begin(), value.end(), id.bytes.begin());
				break;
			}
			case tag_created_at:
				h.session.created_at_ns = static_cast<std::int64_t>(field_u64(value));
				break;
			case tag_time_origin:
				h.session.time_origin_ns = static_cast<std::int64_t>(field_u64(value));
				break;
			case tag_max_chunk_bytes:
				h.chunk_params.max_chunk_bytes = field_u64(value);
				break;
			case tag_max_chunk_ms:
				h.chunk_params.max_chunk_duration_ms = field_u64(value);
				break;
			case tag_recipient:
				if (value.size() != crypto::kKeyBytes)
					throw FormatError("recipient key has wrong width");
				std::copy(value.begin(), value.end(), h.recipient.begin());
				break;
			case tag_wrapped_key:
				h.wrapped_session_key.assign(value.begin(), value.end());
				break;
			case tag_stream:
				h.stream_table.push_back(decode_stream(value));
				break;
			default:
				break;
			}
			if (tag < 9)
				have[tag] = true;
		}
	} catch (const FormatError &e) {
		throw FormatError(std::string("malformed container header: ") + e.what());
	}
	for (int t = 1; t <= 8; ++t)
		if (!have[t])
			throw FormatError("container header missing field " + std::to_string(t));
	try {
		validate_stream_table(h.stream_table);
	} catch (const ConfigError &e) {
		throw FormatError(std::string("container stream table invalid: ") + e.what());
	}
	h.header_end = kPrefixBytes + body_len;
	h.header_hash = crypto::blake2b256(file.subspan(0, h.header_end));
	return h;
}

Bytes bound_metadata(std::uint8_t type, std::uint32_t stream_id, std::uint64_t seq,
                     std::int64_t t_start, std::int64_t t_end, std::uint64_t global_index)
{
	Bytes out;
	out.reserve(kBoundMetaBytes);
	be::put_u8(out, type);
	be::put_u32(out, stream_id);
	be::put_u64(out, seq);
	be::put_i64(out, t_start);
	be::put_i64(out, t_end);
	be::put_u64(out, global_index);
	return out;
}

Bytes associated_data(const crypto::Digest &header_hash, ByteView meta)
{
	Bytes ad(header_hash.begin(), header_hash.end());
	ad.insert(ad.end(), meta.begin(), meta.end());
	return ad;
}

Bytes build_record(const ContainerHeader &header, const crypto::SecretKey &ratchet_key,
                   std::uint8_t type, std::uint32_t stream_id, std::uint64_t seq,
                   std::int64_t t_start, std::int64_t t_end, std::uint64_t global_index,
                   ByteView plaintext)
{
	auto meta = bound_metadata(type, stream_id, seq, t_start, t_end, global_index);
	auto nonce = crypto::nonce_for_index(global_index);
	auto key = crypto::chunk_key(ratchet_key);
	crypto::Tag tag{};
	auto ct = crypto::seal(key, nonce, associated_data(header.header_hash, meta), plaintext, tag);
	key.wipe();

	Bytes rec;
	rec.reserve(kRecordHeadBytes + kFixedBodyBytes + ct.size());
	be::put_bytes(rec, kRecordMarker);
	be::put_u32(rec, static_cast<std::uint32_t>(kFixedBodyBytes + ct.size()));
	be::put_bytes(rec, meta);
	be::put_bytes(rec, nonce);
	be::put_u32(rec, static_cast<std::uint32_t>(ct.size()));
	be::put_bytes(rec, ct);
	be::put_bytes(rec, tag);
	return rec;
}

void fsync_parent(const std::filesystem::path &path)
{
	auto dir = path.parent_path();
	if (dir.empty())
		dir = ".";
	int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
	if (fd >= 0) {
		::fsync(fd);
		::close(fd);
	}
}

struct ParsedRecord {
	std::uint64_t offset = 0;
	std::uint64_t total = 0;
	std::uint8_t type = 0;
	ChunkRecord meta;
	ByteView bound;
	ByteView ciphertext;
	crypto::Tag tag{};
};

enum class ParseStatus { ok, truncated, malformed };

ParseStatus parse_record(ByteView file, std::uint64_t offset, ParsedRecord &out)
{
	const std::uint64_t size = file.size();
	if (offset + kRecordMarker.size() > size) {
		auto avail = file.subspan(offset);
		return std::equal(avail.begin(), avail.end(), kRecordMarker.begin()) ? ParseStatus::truncated
		                                                                      : ParseStatus::malformed;
	}
	if (!std::equal(kRecordMarker.begin(), kRecordMarker.end(), file.begin() + offset))
		return ParseStatus::malformed;
	if (offset + kRecordHeadBytes > size)
		return ParseStatus::truncated;
	std::uint64_t body_len = be::load_u32(file.data() + offset + 4);
	if (body_len < kFixedBodyBytes)
		return ParseStatus::malformed;
	if (offset + kRecordHeadBytes + body_len > size)
		return ParseStatus::truncated;

	const std::uint8_t *p = file.data() + offset + kRecordHeadBytes;
	out.offset = offset;
	out.total = kRecordHeadBytes + body_len;
	out.type = p[0];
	out.bound = ByteView(p, kBoundMetaBytes);
	out.meta.stream_id = be::load_u32(p + 1);
	out.meta.seq = be::load_u64(p + 5);
	out.meta.t_start_ns = static_cast<std::int64_t>(be::load_u64(p + 13));
	out.meta.t_end_ns = static_cast<std::int64_t>(be::load_u64(p + 21));
	out.meta.global_index = be::load_u64(p + 29);
	std::copy(p + kBoundMetaBytes, p + kBoundMetaBytes + crypto::kNonceBytes, out.meta.nonce.begin());
	const std::uint8_t *q = p + kBoundMetaBytes + crypto::kNonceBytes;
	std::uint64_t ct_len = be::load_u32(q);
	if (ct_len + kFixedBodyBytes != body_len)
		return ParseStatus::malformed;
	if (out.type != kTypeChunk && out.type != kTypeFooter)
		return ParseStatus::malformed;
	out.ciphertext = ByteView(q + 4, ct_len);
	std::copy(q + 4 + ct_len, q + 4 + ct_len + crypto::kTagBytes, out.tag.begin());
	out.meta.file_offset = offset;
	out.meta.record_bytes = out.total;
	return ParseStatus::ok;
}

// Derives key(i) from the session root on demand and caches the chain.
class KeyChain {
public:
	explicit KeyChain(const crypto::SecretKey &root) { keys_.push_back(crypto::ratchet_initial(root)); }

	const crypto::SecretKey *at(std::uint64_t index, std::uint64_t expected)
	{
		if (index > expected + kMaxIndexSkip)
			return nullptr;
		while (keys_.size() <= index)
			keys_.push_back(crypto::ratchet_next(keys_.back()));
		return &keys_[index];
	}

private:
	std::vector<crypto::SecretKey> keys_;
};

} // namespace

class MappedFile {
public:
	explicit MappedFile(const std::filesystem::path &path)
	{
		fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
		if (fd_ < 0)
			throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
		struct stat st {};
		if (::fstat(fd_, &st) != 0) {
			::close(fd_);
			throw IoError("cannot stat " + path.string());
		}
		size_ = static_cast<std::size_t>(st.st_size);
		if (size_ > 0) {
			void *p = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
			if (p == MAP_FAILED) {
				::close(fd_);
				throw IoError("cannot map " + path.string());
			}
			data_ = static_cast<const std::uint8_t *>(p);
		}
	}
	MappedFile(const MappedFile &) = delete;
	MappedFile &operator=(const MappedFile &) = delete;
	~MappedFile()
	{
		if (data_)
			::munmap(const_cast<std::uint8_t *>(data_), size_);
		if (fd_ >= 0)
			::close(fd_);
	}

	ByteView view() const { return ByteView(data_, size_); }

private:
	int fd_ = -1;
	const std::uint8_t *data_ = nullptr;
	std::size_t size_ = 0;
};

namespace {

struct ScanItem {
	enum class Kind { chunk, footer, bad, truncated, unexpected };
	Kind kind = Kind::chunk;
	ParsedRecord record;
	Bytes plaintext;
	std::vector<std::uint64_t> bad_indices;
	std::uint64_t offset = 0;
};

// Sequential record scanner shared by the reader, verifier and recovery.
// Resynchronises on the record marker after damage.
class Scanner {
public:
	Scanner(ByteView file, const ContainerHeader &header, const crypto::SecretKey &root)
	    : file_(file), header_(header), chain_(root), pos_(header.header_end)
	{
	}

	std::optional<ScanItem> next()
	{
		if (!pending_.empty()) {
			auto item = std::move(pending_.front());
			pending_.pop_front();
			return item;
		}
		if (done_)
			return std::nullopt;
		if (pos_ >= file_.size()) {
			done_ = true;
			return std::nullopt;
		}
		if (footer_seen_) {
			done_ = true;
			return make_offset_item(ScanItem::Kind::unexpected, pos_);
		}

		ParsedRecord rec;
		auto status = parse_record(file_, pos_, rec);
		if (status == ParseStatus::ok) {
			Bytes plain;
			if (authenticate(rec, plain)) {
				pos_ += rec.total;
				return accept(std::move(rec), std::move(plain));
			}
			pos_ += rec.total;
			ScanItem bad;
			bad.kind = ScanItem::Kind::bad;
			bad.offset = rec.offset;
			bad.bad_indices.push_back(expected_++);
			return bad;
		}

		auto bad_start = pos_;
		ParsedRecord good;
		Bytes plain;
		if (resync(pos_ + 1, good, plain)) {
			pos_ = good.offset + good.total;
			auto item = accept(std::move(good), std::move(plain));
			const bool gap_queued = !pending_.empty();
			pending_.push_back(std::move(item));
			if (gap_queued) {
				auto first = std::move(pending_.front());
				pending_.pop_front();
				return first;
			}
			// Damage that swallowed no chunk index: stray bytes between records.
			return make_offset_item(ScanItem::Kind::unexpected, bad_start);
		}

		done_ = true;
		if (status == ParseStatus::truncated)
			return make_offset_item(ScanItem::Kind::truncated, bad_start);
		ScanItem bad;
		bad.kind = ScanItem::Kind::bad;
		bad.offset = bad_start;
		bad.bad_indices.push_back(expected_++);
		return bad;
	}

	std::uint64_t expected() const { return expected_; }
	bool footer_seen() const { return footer_seen_; }

private:
	static ScanItem make_offset_item(ScanItem::Kind kind, std::uint64_t offset)
	{
		ScanItem item;
		item.kind = kind;
		item.offset = offset;
		return item;
	}

	bool authenticate(const ParsedRecord &rec, Bytes &plain)
	{
		if (rec.meta.nonce != crypto::nonce_for_index(rec.meta.global_index))
			return false;
		const auto *k = chain_.at(rec.meta.global_index, expected_);
		if (!k)
			return false;
		auto key = crypto::chunk_key(*k);
		bool ok = crypto::open(key, rec.meta.nonce, associated_data(header_.header_hash, rec.bound),
		                       rec.ciphertext, rec.tag, plain);
		key.wipe();
		return ok;
	}

	bool resync(std::uint64_t from, ParsedRecord &rec, Bytes &plain)
	{
		const auto *begin = file_.data();
		const auto *end = begin + file_.size();
		const auto *p = begin + from;
		while (p < end) {
			p = std::search(p, end, kRecordMarker.begin(), kRecordMarker.end());
			if (p == end)
				break;
			auto off = static_cast<std::uint64_t>(p - begin);
			if (parse_record(file_, off, rec) == ParseStatus::ok && authenticate(rec, plain))
				return true;
			++p;
		}
		return false;
	}

	ScanItem accept(ParsedRecord rec, Bytes plain)
	{
		const auto g = rec.meta.global_index;
		ScanItem item;
		item.offset = rec.offset;

		if (rec.type == kTypeFooter) {
			if (plain.size() != 8 || be::load_u64(plain.data()) != g ||
			    rec.meta.stream_id != kFooterStreamId) {
				item.kind = ScanItem::Kind::bad;
				item.bad_indices.push_back(g);
				return item;
			}
			queue_gap(g);
			footer_seen_ = true;
			expected_ = g + 1;
			item.kind = ScanItem::Kind::footer;
			item.record = std::move(rec);
			return item;
		}

		if (g < expected_ || rec.meta.stream_id >= header_.stream_table.size()) {
			// Replayed or misfiled record: authentic bytes in the wrong place.
			item.kind = ScanItem::Kind::bad;
			item.bad_indices.push_back(g);
			return item;
		}
		queue_gap(g);
		expected_ = g + 1;
		item.kind = ScanItem::Kind::chunk;
		item.record = std::move(rec);
		item.plaintext = std::move(plain);
		return item;
	}

	void queue_gap(std::uint64_t g)
	{
		if (g <= expected_)
			return;
		ScanItem gap;
		gap.kind = ScanItem::Kind::bad;
		gap.offset = pos_;
		for (auto i = expected_; i < g; ++i)
			gap.bad_indices.push_back(i);
		pending_.push_back(std::move(gap));
	}

	ByteView file_;
	const ContainerHeader &header_;
	KeyChain chain_;
	std::uint64_t pos_;
	std::uint64_t expected_ = 0;
	bool footer_seen_ = false;
	bool done_ = false;
	std::deque<ScanItem> pending_;
};

crypto::SecretKey unwrap_root(const ContainerHeader &h, const crypto::SecretKey &priv)
{
	auto pub = crypto::public_from_private(priv);
	if (pub != h.recipient)
		throw KeyError("container is sealed to a different project key");
	Bytes raw;
	try {
		raw = crypto::unwrap(h.recipient, priv, h.wrapped_session_key);
	} catch (const KeyError &) {
		throw IntegrityError("wrapped session key is corrupt");
	}
	if (raw.size() != crypto::kKeyBytes)
		throw IntegrityError("wrapped session key has wrong size");
	crypto::SecretKey root(raw);
	std::fill(raw.begin(), raw.end(), 0);
	return root;
}

} // namespace

const StreamDescriptor &ContainerHeader::stream(std::uint32_t id) const
{
	if (id >= stream_table.size())
		throw PreconditionError("unknown stream id " + std::to_string(id));
	return stream_table[id];
}

Bytes encode_frames(std::span<const MediaFrame> frames)
{
	Bytes out;
	std::size_t total = 4;
	for (const auto &f : frames)
		total += 20 + f.payload.size();
	out.reserve(total);
	be::put_u32(out, static_cast<std::uint32_t>(frames.size()));
	for (const auto &f : frames) {
		be::put_u64(out, f.seq);
		be::put_i64(out, f.t_capture_ns);
		be::put_u32(out, static_cast<std::uint32_t>(f.payload.size()));
		be::put_bytes(out, f.payload);
	}
	return out;
}

std::vector<MediaFrame> decode_frames(std::uint32_t stream_id, ByteView plaintext)
{
	be::Reader r(plaintext);
	auto n = r.u32();
	std::vector<MediaFrame> frames;
	frames.reserve(std::min<std::size_t>(n, plaintext.size() / 20));
	for (std::uint32_t i = 0; i < n; ++i) {
		MediaFrame f;
		f.stream_id = stream_id;
		f.seq = r.u64();
		f.t_capture_ns = r.i64();
		auto payload = r.bytes(r.u32());
		f.payload.assign(payload.begin(), payload.end());
		frames.push_back(std::move(f));
	}
	if (!r.empty())
		throw FormatError("trailing bytes in chunk plaintext");
	return frames;
}

// ---------------------------------------------------------------------------
// Writer

ContainerWriter ContainerWriter::create(const std::filesystem::path &path,
                                        const crypto::PublicKey &recipient, const SessionMeta &meta,
                                        std::vector<StreamDescriptor> streams,
                                        const WriterOptions &options)
{
	validate_stream_table(streams);
	std::sort(streams.begin(), streams.end(),
	          [](const auto &a, const auto &b) { return a.stream_id < b.stream_id; });

	ContainerWriter w;
	w.path_ = path;
	w.options_ = options;
	w.header_.session = meta;
	w.header_.stream_table = std::move(streams);
	w.header_.recipient = recipient;
	w.header_.chunk_params = options.chunk;

	{
		auto root = crypto::SecretKey::random();
		w.header_.wrapped_session_key = crypto::wrap(recipient, root.view());
		w.ratchet_.counter = 0;
		w.ratchet_.current_key = crypto::ratchet_initial(root);
		root.wipe();
	}

	auto header_bytes = encode_header(w.header_);
	w.header_.header_end = header_bytes.size();
	w.header_.header_hash = crypto::blake2b256(header_bytes);

	w.fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0640);
	if (w.fd_ < 0) {
		if (errno == EEXIST)
			throw PreconditionError("refusing to overwrite existing file " + path.string());
		throw IoError("cannot create " + path.string() + ": " + std::strerror(errno));
	}
	w.write_record(header_bytes);
	if (::fsync(w.fd_) != 0)
		throw IoError("fsync failed for " + path.string());
	fsync_parent(path);

	w.next_seq_.assign(w.header_.stream_table.size(), 0);
	w.last_t_end_.assign(w.header_.stream_table.size(), std::nullopt);
	return w;
}

ContainerWriter::ContainerWriter(ContainerWriter &&other) noexcept { *this = std::move(other); }

ContainerWriter &ContainerWriter::operator=(ContainerWriter &&other) noexcept
{
	if (this != &other) {
		close();
		path_ = std::move(other.path_);
		fd_ = std::exchange(other.fd_, -1);
		header_ = std::move(other.header_);
		ratchet_ = other.ratchet_;
		other.ratchet_.current_key.wipe();
		options_ = other.options_;
		next_seq_ = std::move(other.next_seq_);
		last_t_end_ = std::move(other.last_t_end_);
		size_ = other.size_;
		finalized_ = other.finalized_;
		failed_ = other.failed_;
	}
	return *this;
}

ContainerWriter::~ContainerWriter() { close(); }

void ContainerWriter::close()
{
	ratchet_.current_key.wipe();
	if (fd_ >= 0) {
		::close(fd_);
		fd_ = -1;
	}
}

void ContainerWriter::write_record(const Bytes &record)
{
	std::size_t done = 0;
	while (done < record.size()) {
		auto n = ::write(fd_, record.data() + done, record.size() - done);
		if (n < 0 && errno == EINTR)
			continue;
		if (n <= 0) {
			int err = errno;
			failed_ = true;
			// Drop the partial record so the file stays valid up to the last chunk.
			if (::ftruncate(fd_, static_cast<off_t>(size_)) == 0)
				::lseek(fd_, static_cast<off_t>(size_), SEEK_SET);
			throw IoError("write to " + path_.string() + " failed: " + std::strerror(err));
		}
		done += static_cast<std::size_t>(n);
	}
	size_ += record.size();
}

ChunkRecord ContainerWriter::append_chunk(std::uint32_t stream_id, std::span<const MediaFrame> frames)
{
	if (failed_)
		throw IoError("container writer is in a failed state");
	if (finalized_)
		throw PreconditionError("container is finalized");
	if (frames.empty())
		throw PreconditionError("append_chunk requires a non-empty frame batch");
	if (stream_id >= header_.stream_table.size())
		throw PreconditionError("unknown stream id " + std::to_string(stream_id));

	for (std::size_t i = 0; i < frames.size(); ++i) {
		if (frames[i].stream_id != stream_id)
			throw PreconditionError("frame belongs to a different stream");
		if (i > 0 && (frames[i].t_capture_ns < frames[i - 1].t_capture_ns ||
		              frames[i].seq <= frames[i - 1].seq))
			throw PreconditionError("frame timestamps or sequence numbers regress within batch");
	}
	const auto t_start = frames.front().t_capture_ns;
	const auto t_end = frames.back().t_capture_ns;
	if (last_t_end_[stream_id] && t_start < *last_t_end_[stream_id])
		throw PreconditionError("timestamp regression on stream " + std::to_string(stream_id));

	ChunkRecord meta;
	meta.stream_id = stream_id;
	meta.seq = next_seq_[stream_id];
	meta.t_start_ns = t_start;
	meta.t_end_ns = t_end;
	meta.global_index = ratchet_.counter;
	meta.nonce = crypto::nonce_for_index(meta.global_index);
	meta.file_offset = size_;

	auto plain = encode_frames(frames);
	auto record = build_record(header_, ratchet_.current_key, kTypeChunk, stream_id, meta.seq,
	                           t_start, t_end, meta.global_index, plain);
	std::fill(plain.begin(), plain.end(), 0);
	meta.record_bytes = record.size();

	// key(i) is consumed; erase it before the write can fail.
	ratchet_.advance();
	write_record(record);
	if (options_.sync_each_chunk && ::fdatasync(fd_) != 0) {
		failed_ = true;
		throw IoError("fdatasync failed for " + path_.string());
	}

	++next_seq_[stream_id];
	last_t_end_[stream_id] = t_end;
	return meta;
}

void ContainerWriter::finalize()
{
	if (finalized_)
		return;
	if (failed_)
		throw IoError("container writer is in a failed state");
	Bytes plain;
	be::put_u64(plain, ratchet_.counter);
	auto record = build_record(header_, ratchet_.current_key, kTypeFooter, kFooterStreamId, 0, 0, 0,
	                           ratchet_.counter, plain);
	ratchet_.advance();
	write_record(record);
	if (::fsync(fd_) != 0)
		throw IoError("fsync failed for " + path_.string());
	finalized_ = true;
	close();
}

// ---------------------------------------------------------------------------
// Reader

struct ContainerReader::State {
	std::unique_ptr<MappedFile> file;
	ContainerHeader header;
	std::unique_ptr<Scanner> scanner;
	bool finalized = false;
	std::optional<std::uint64_t> truncated_at;
};

ContainerReader::ContainerReader(std::unique_ptr<State> state) : state_(std::move(state)) {}
ContainerReader::ContainerReader(ContainerReader &&) noexcept = default;
ContainerReader &ContainerReader::operator=(ContainerReader &&) noexcept = default;
ContainerReader::~ContainerReader() = default;

ContainerReader ContainerReader::open(const std::filesystem::path &path, const crypto::SecretKey &priv)
{
	auto st = std::make_unique<State>();
	st->file = std::make_unique<MappedFile>(path);
	st->header = decode_header(st->file->view());
	auto root = unwrap_root(st->header, priv);
	st->scanner = std::make_unique<Scanner>(st->file->view(), st->header, root);
	root.wipe();
	return ContainerReader(std::move(st));
}

const ContainerHeader &ContainerReader::header() const { return state_->header; }

std::optional<DecodedChunk> ContainerReader::next()
{
	for (;;) {
		auto item = state_->scanner->next();
		if (!item)
			return std::nullopt;
		switch (item->kind) {
		case ScanItem::Kind::chunk: {
			DecodedChunk c;
			c.record = item->record.meta;
			c.frames = decode_frames(c.record.stream_id, item->plaintext);
			return c;
		}
		case ScanItem::Kind::footer:
			state_->finalized = true;
			continue;
		case ScanItem::Kind::truncated:
			state_->truncated_at = item->offset;
			return std::nullopt;
		case ScanItem::Kind::bad: {
			std::string which;
			for (auto i : item->bad_indices)
				which += (which.empty() ? "" : ",") + std::to_string(i);
			throw IntegrityError("chunk(s) " + which + " failed authentication");
		}
		case ScanItem::Kind::unexpected:
			throw IntegrityError("unexpected data at byte offset " + std::to_string(item->offset));
		}
	}
}

std::vector<DecodedChunk> ContainerReader::read_all()
{
	std::vector<DecodedChunk> out;
	while (auto c = next())
		out.push_back(std::move(*c));
	return out;
}

bool ContainerReader::finalized() const { return state_->finalized; }

std::optional<std::uint64_t> ContainerReader::truncated_at() const { return state_->truncated_at; }

// ---------------------------------------------------------------------------
// Verification and recovery

namespace {

template <typename OnGood>
IntegrityReport scan_all(ByteView file, const ContainerHeader &header, const crypto::SecretKey &priv,
                         OnGood &&on_good)
{
	auto root = unwrap_root(header, priv);
	Scanner scanner(file, header, root);
	root.wipe();

	IntegrityReport report;
	std::set<std::uint64_t> tampered;
	while (auto item = scanner.next()) {
		switch (item->kind) {
		case ScanItem::Kind::chunk:
			++report.chunks_ok;
			on_good(*item);
			break;
		case ScanItem::Kind::footer:
			report.finalized = true;
			on_good(*item);
			break;
		case ScanItem::Kind::bad:
			tampered.insert(item->bad_indices.begin(), item->bad_indices.end());
			break;
		case ScanItem::Kind::truncated:
			report.truncated_at = item->offset;
			break;
		case ScanItem::Kind::unexpected:
			if (!report.unexpected_data_at)
				report.unexpected_data_at = item->offset;
			break;
		}
	}
	report.tampered.assign(tampered.begin(), tampered.end());
	return report;
}

} // namespace

ContainerHeader read_header(const std::filesystem::path &path)
{
	MappedFile file(path);
	return decode_header(file.view());
}

IntegrityReport verify_container(const std::filesystem::path &path, const crypto::SecretKey &priv)
{
	MappedFile file(path);
	auto header = decode_header(file.view());
	return scan_all(file.view(), header, priv, [](const ScanItem &) {});
}

RecoveryResult recover_truncated(const std::filesystem::path &path, const crypto::SecretKey &priv,
                                 const std::filesystem::path &out_path)
{
	MappedFile file(path);
	ContainerHeader header;
	try {
		header = decode_header(file.view());
	} catch (const FormatError &e) {
		throw FormatError(std::string("unrecoverable: ") + e.what());
	}

	Bytes out(file.view().begin(), file.view().begin() + static_cast<std::ptrdiff_t>(header.header_end));
	RecoveryResult result;
	result.source_report = scan_all(file.view(), header, priv, [&](const ScanItem &item) {
		auto rec = file.view().subspan(item.record.offset, item.record.total);
		out.insert(out.end(), rec.begin(), rec.end());
	});
	result.chunks_recovered = result.source_report.chunks_ok;

	int fd = ::open(out_path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0640);
	if (fd < 0)
		throw IoError("cannot create " + out_path.string() + ": " + std::strerror(errno));
	std::size_t done = 0;
	while (done < out.size()) {
		auto n = ::write(fd, out.data() + done, out.size() - done);
		if (n <= 0) {
			::close(fd);
			throw IoError("write to " + out_path.string() + " failed");
		}
		done += static_cast<std::size_t>(n);
	}
	::fsync(fd);
	::close(fd);
	return result;
}

} // namespace cusco::container
