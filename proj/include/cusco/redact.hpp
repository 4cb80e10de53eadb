#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "cusco/container.hpp"

// Post-hoc redaction: silence audio intervals, blur video rectangles, verify,
// and only then export plaintext.
//
// Redaction list (JSON):
//
//   {"session_id": "<uuid>",
//    "entries": [{"stream_id": 0, "t_start_s": 1.0, "t_end_s": 2.0},
//                {"stream_id": 1, "t_start_s": 1.0, "t_end_s": 2.0,
//                 "region": {"x": 10, "y": 20, "w": 40, "h": 30}}]}
//
// Times are seconds from the container's time origin, intervals half-open.
// Entries may overlap; the effect is their union.
namespace cusco::redact {

struct Rect {
	std::uint32_t x = 0, y = 0, w = 0, h = 0;
	bool contains(std::uint32_t px, std::uint32_t py) const { return px >= x && px < x + w && py >= y && py < y + h; }
	friend bool operator==(const Rect &, const Rect &) = default;
};

struct RedactionEntry {
	std::uint32_t stream_id = 0;
	double t_start_s = 0;
	double t_end_s = 0;
	std::optional<Rect> region;

	bool covers(double t) const { return t >= t_start_s && t < t_end_s; }
	friend bool operator==(const RedactionEntry &, const RedactionEntry &) = default;
};

struct RedactionList {
	Uuid session_id;
	std::vector<RedactionEntry> entries;

	static RedactionList from_json(const nlohmann::json &j);
	static RedactionList load(const std::filesystem::path &path);
	nlohmann::json to_json() const;
};

nlohmann::json to_json(const RedactionEntry &e);
RedactionEntry entry_from_json(const nlohmann::json &j);

// ConfigError naming the entry on: unknown or non-media stream, empty
// interval, missing/extra region, region outside the frame, session mismatch.
void validate(const RedactionList &list, const container::ContainerHeader &header);

struct EntryResult {
	bool applied = false;
	bool verified = false;
	// Audio: worst RMS in dBFS inside the interval (ramps excluded), null when
	// no samples fall inside. Video: largest neighbour difference in a region.
	std::optional<double> metric;
	std::string detail;
};

struct RedactionReport {
	std::vector<EntryResult> entries;
	bool pass() const;
	nlohmann::json to_json(const RedactionList &list) const;
};

struct RedactOptions {
	std::uint32_t kernel = 15;
	// Linear fade at each edge of a silenced interval, inside the interval.
	double ramp_s = 0.010;
	double max_rms_dbfs = -90.0;
	bool sync_each_chunk = true;

	void validate() const;
};

// Audio gain at time t for the given audio entries: 1 outside every interval,
// 0 inside, linear over `ramp_s` at both inner edges. Overlaps multiply.
double silence_gain(std::span<const RedactionEntry> entries, double t, double ramp_s);

// k x k box blur of one channel plane with edge clamping, rounded half up:
// (sum + k*k/2) / (k*k).
std::vector<std::uint32_t> box_blur(const std::vector<std::uint32_t> &plane, std::uint32_t w, std::uint32_t h,
                                    std::uint32_t k);

// Blurs every pixel inside any of `regions` from the unmodified frame.
void blur_regions(Bytes &payload, const VideoParams &p, std::span<const Rect> regions, std::uint32_t k);

// Largest difference between horizontally or vertically adjacent pixels
// (any channel) with both inside `region`.
std::uint32_t max_neighbour_diff(ByteView payload, const VideoParams &p, const Rect &region);
// A k-box-blurred image cannot step by more than full scale / k between
// neighbours; one more for rounding.
std::uint32_t smoothness_bound(const VideoParams &p, std::uint32_t k);

// Reads `in`, applies the list and writes a new container for `recipient`
// with the same chunk boundaries. Applied entries are logged in the meta
// stream; entries already logged there are skipped, so re-applying a list is
// a no-op on media. The report comes from verifying the output.
RedactionReport apply_redactions(const std::filesystem::path &in, const crypto::SecretKey &priv,
                                 const RedactionList &list, const std::filesystem::path &out,
                                 const crypto::PublicKey &recipient, const RedactOptions &opts = {});

RedactionReport verify_redactions(const std::filesystem::path &container, const crypto::SecretKey &priv,
                                  const RedactionList &list, const RedactOptions &opts = {});

// Entries logged by earlier apply runs.
RedactionList attached_list(const std::filesystem::path &container, const crypto::SecretKey &priv);

struct ExportResult;

// Proof that a container passed verification in this process. Export checks
// the container has not changed since.
class Verification {
public:
	const RedactionReport &report() const { return report_; }
	const RedactionList &list() const { return list_; }
	const std::filesystem::path &path() const { return path_; }
	bool attested_empty() const { return attested_empty_; }
	bool pass() const { return report_.pass() && (attested_empty_ || !list_.entries.empty()); }

private:
	friend Verification verify_for_export(const std::filesystem::path &, const crypto::SecretKey &, bool,
	                                      const RedactOptions &);
	Verification() = default;
	std::filesystem::path path_;
	RedactionList list_;
	RedactionReport report_;
	std::string digest_;
	bool attested_empty_ = false;
	friend ExportResult export_plain(const Verification &, const crypto::SecretKey &, const std::filesystem::path &);
};

// Verifies the attached list. With no list attached the container only
// qualifies when `attest_no_redactions` is set.
Verification verify_for_export(const std::filesystem::path &container, const crypto::SecretKey &priv,
                               bool attest_no_redactions, const RedactOptions &opts = {});

struct ExportedFile {
	std::string name;
	std::uint32_t stream_id = 0;
	std::uint64_t bytes = 0;
	std::string sha256;
};

struct ExportResult {
	std::vector<ExportedFile> files;
	std::filesystem::path manifest;
};

// One file per stream plus manifest.json: audio as 16-bit WAV, video and
// depth as raw planar frames with a JSON sidecar, meta and VAD as JSON lines.
// PreconditionError, with nothing written, unless `v` passed and the
// container is unchanged since.
ExportResult export_plain(const Verification &v, const crypto::SecretKey &priv, const std::filesystem::path &out_dir);

// Verify then export, in one call.
ExportResult export_plain(const std::filesystem::path &container, const crypto::SecretKey &priv,
                          const std::filesystem::path &out_dir, bool attest_no_redactions,
                          const RedactOptions &opts = {});

} // namespace cusco::redact
