#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "cusco/common.hpp"
#include "cusco/crypto.hpp"
#include "cusco/media.hpp"

// Append-only encrypted recording container.
//
// File layout (all integers big-endian):
//
//   "CUSCOREC"              8 bytes magic
//   format_version          u16
//   header_len              u32
//   header                  header_len bytes of TLV fields (u16 tag, u32 len, value)
//   record*                 chunk records, optionally ending in one footer record
//
// Record:
//
//   "CREC"                  4 bytes sync marker
//   body_len                u32 (= 69 + ct_len)
//   type                    u8   1 = media chunk, 2 = footer
//   stream_id               u32  (0xFFFFFFFF for the footer)
//   seq                     u64  per-stream chunk sequence
//   t_start_ns, t_end_ns    i64, i64
//   global_index            u64  position in the ratchet sequence
//   nonce                   12 bytes, 4 zero bytes then global_index
//   ct_len                  u32
//   ciphertext              ct_len bytes
//   tag                     16 bytes Poly1305
//
// The AEAD associated data is BLAKE2b-256(magic..header) followed by the 37
// bytes from `type` through `global_index`, so both the header and each
// record's metadata are authenticated.
namespace cusco::container {

inline constexpr std::array<std::uint8_t, 8> kMagic = {'C', 'U', 'S', 'C', 'O', 'R', 'E', 'C'};
inline constexpr std::array<std::uint8_t, 4> kRecordMarker = {'C', 'R', 'E', 'C'};
inline constexpr std::uint16_t kFormatVersion = 1;
inline constexpr std::uint32_t kFooterStreamId = 0xFFFFFFFF;

struct ChunkParams {
	std::uint64_t max_chunk_bytes = 1 << 20;
	std::uint64_t max_chunk_duration_ms = 1000;

	friend bool operator==(const ChunkParams &, const ChunkParams &) = default;
};

struct SessionMeta {
	Uuid project_id;
	Uuid session_id;
	std::int64_t created_at_ns = 0;
	// Monotonic instant that relative times (redaction lists, features) count from.
	std::int64_t time_origin_ns = 0;
};

struct ContainerHeader {
	std::uint16_t format_version = kFormatVersion;
	SessionMeta session;
	std::vector<StreamDescriptor> stream_table;
	crypto::PublicKey recipient{};
	Bytes wrapped_session_key;
	ChunkParams chunk_params;

	// Byte offset of the first record and hash of everything before it.
	std::uint64_t header_end = 0;
	crypto::Digest header_hash{};

	const StreamDescriptor &stream(std::uint32_t id) const;
};

// Metadata of one sealed chunk as written to disk.
struct ChunkRecord {
	std::uint32_t stream_id = 0;
	std::uint64_t seq = 0;
	std::int64_t t_start_ns = 0;
	std::int64_t t_end_ns = 0;
	std::uint64_t global_index = 0;
	crypto::Nonce nonce{};
	std::uint64_t file_offset = 0;
	std::uint64_t record_bytes = 0;
};

struct WriterOptions {
	ChunkParams chunk;
	// fdatasync after every record. Only tests that churn thousands of
	// containers turn this off.
	bool sync_each_chunk = true;
};

class ContainerWriter {
public:
	// Refuses to overwrite `path`. The header is durable when this returns and
	// the session root key has already been wiped.
	static ContainerWriter create(const std::filesystem::path &path,
	                              const crypto::PublicKey &recipient, const SessionMeta &meta,
	                              std::vector<StreamDescriptor> streams,
	                              const WriterOptions &options = {});

	ContainerWriter(ContainerWriter &&other) noexcept;
	ContainerWriter &operator=(ContainerWriter &&other) noexcept;
	ContainerWriter(const ContainerWriter &) = delete;
	ContainerWriter &operator=(const ContainerWriter &) = delete;
	~ContainerWriter();

	// Seals `frames` as one chunk with key(counter), flushes, and advances the
	// ratchet. Throws PreconditionError for empty batches, unknown streams and
	// timestamp regressions; IoError (fatal) on write failure.
	ChunkRecord append_chunk(std::uint32_t stream_id, std::span<const MediaFrame> frames);

	// Writes the footer record. No appends are possible afterwards.
	void finalize();

	// Copy of the live ratchet: what a device seizure would expose.
	crypto::RatchetState ratchet_snapshot() const { return ratchet_; }

	const ContainerHeader &header() const { return header_; }
	const std::filesystem::path &path() const { return path_; }
	std::uint64_t chunk_count() const { return finalized_ ? ratchet_.counter - 1 : ratchet_.counter; }
	std::uint64_t bytes_written() const { return size_; }
	bool finalized() const { return finalized_; }
	bool failed() const { return failed_; }

private:
	ContainerWriter() = default;
	void write_record(const Bytes &record);
	void close();

	std::filesystem::path path_;
	int fd_ = -1;
	ContainerHeader header_;
	crypto::RatchetState ratchet_;
	WriterOptions options_;
	std::vector<std::uint64_t> next_seq_;
	std::vector<std::optional<std::int64_t>> last_t_end_;
	std::uint64_t size_ = 0;
	bool finalized_ = false;
	bool failed_ = false;
};

struct DecodedChunk {
	ChunkRecord record;
	std::vector<MediaFrame> frames;
};

class MappedFile;

// Sequential reader. Every tag is verified before its plaintext is returned.
class ContainerReader {
public:
	// KeyError for a key that does not match the container; FormatError for a
	// damaged or foreign file.
	static ContainerReader open(const std::filesystem::path &path, const crypto::SecretKey &priv);

	ContainerReader(ContainerReader &&) noexcept;
	ContainerReader &operator=(ContainerReader &&) noexcept;
	~ContainerReader();

	const ContainerHeader &header() const;

	// Next chunk in global order. Returns nullopt at the end of data, including
	// a truncated tail (see truncated_at()). Throws IntegrityError on any chunk
	// that fails authentication or is out of sequence.
	std::optional<DecodedChunk> next();

	std::vector<DecodedChunk> read_all();

	bool finalized() const;
	std::optional<std::uint64_t> truncated_at() const;

private:
	struct State;
	explicit ContainerReader(std::unique_ptr<State> state);
	std::unique_ptr<State> state_;
};

struct IntegrityReport {
	std::uint64_t chunks_ok = 0;
	std::vector<std::uint64_t> tampered;
	std::optional<std::uint64_t> truncated_at;
	bool finalized = false;
	// Bytes after the footer, or an unparseable tail that is not a truncation.
	std::optional<std::uint64_t> unexpected_data_at;

	bool clean() const
	{
		return tampered.empty() && !truncated_at && !unexpected_data_at;
	}
};

// Full read-only scan. Header-level damage and wrong keys throw, as for open.
IntegrityReport verify_container(const std::filesystem::path &path, const crypto::SecretKey &priv);

struct RecoveryResult {
	std::uint64_t chunks_recovered = 0;
	IntegrityReport source_report;
};

// Copies the header and every authenticating record verbatim into `out_path`.
// Throws FormatError("unrecoverable: ...") when the header itself is incomplete.
RecoveryResult recover_truncated(const std::filesystem::path &path, const crypto::SecretKey &priv,
                                 const std::filesystem::path &out_path);

// Parses only the plaintext header; needs no key.
ContainerHeader read_header(const std::filesystem::path &path);

// Frame batch <-> chunk plaintext.
Bytes encode_frames(std::span<const MediaFrame> frames);
std::vector<MediaFrame> decode_frames(std::uint32_t stream_id, ByteView plaintext);

} // namespace cusco::container
