#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cusco {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

// Error hierarchy. Every module throws one of these; the CLI and daemon map
// them onto exit codes / HTTP statuses.
class Error : public std::runtime_error {
public:
	explicit Error(const std::string &what) : std::runtime_error(what) {}
};

class ConfigError : public Error {
public:
	using Error::Error;
};

class FormatError : public Error {
public:
	using Error::Error;
};

// Wrong key: distinguishable from corruption.
class KeyError : public Error {
public:
	using Error::Error;
};

class IntegrityError : public Error {
public:
	using Error::Error;
};

class IoError : public Error {
public:
	using Error::Error;
};

class PreconditionError : public Error {
public:
	using Error::Error;
};

class ProtocolError : public Error {
public:
	using Error::Error;
};

// 128-bit identifier, rendered in the usual 8-4-4-4-12 hex form.
struct Uuid {
	std::array<std::uint8_t, 16> bytes{};

	static Uuid random();
	static Uuid parse(std::string_view text);
	std::string str() const;
	bool is_nil() const;

	friend bool operator==(const Uuid &, const Uuid &) = default;
	friend auto operator<=>(const Uuid &, const Uuid &) = default;
};

// Monotonic time source in nanoseconds. Injectable so every simulation-facing
// component runs deterministically under test.
class Clock {
public:
	virtual ~Clock() = default;
	virtual std::int64_t now_ns() const = 0;
};

class SteadyClock final : public Clock {
public:
	std::int64_t now_ns() const override;
};

// UTC wall clock, nanoseconds since the Unix epoch.
class SystemClock final : public Clock {
public:
	std::int64_t now_ns() const override;
};

class ManualClock final : public Clock {
public:
	explicit ManualClock(std::int64_t start_ns = 0) : now_(start_ns) {}
	std::int64_t now_ns() const override { return now_.load(); }
	void set(std::int64_t t) { now_.store(t); }
	void advance(std::int64_t dt) { now_.fetch_add(dt); }

private:
	std::atomic<std::int64_t> now_;
};

constexpr std::int64_t kNsPerMs = 1'000'000;
constexpr std::int64_t kNsPerSec = 1'000'000'000;

// Big-endian encoding helpers shared by the container and wire formats.
namespace be {

void put_u8(Bytes &out, std::uint8_t v);
void put_u16(Bytes &out, std::uint16_t v);
void put_u32(Bytes &out, std::uint32_t v);
void put_u64(Bytes &out, std::uint64_t v);
inline void put_i64(Bytes &out, std::int64_t v) { put_u64(out, static_cast<std::uint64_t>(v)); }
void put_bytes(Bytes &out, ByteView v);

std::uint16_t load_u16(const std::uint8_t *p);
std::uint32_t load_u32(const std::uint8_t *p);
std::uint64_t load_u64(const std::uint8_t *p);

// Bounds-checked sequential reader; throws FormatError on overrun.
class Reader {
public:
	explicit Reader(ByteView data) : data_(data) {}

	std::uint8_t u8();
	std::uint16_t u16();
	std::uint32_t u32();
	std::uint64_t u64();
	std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
	ByteView bytes(std::size_t n);
	std::string string(std::size_t n);

	std::size_t remaining() const { return data_.size() - pos_; }
	std::size_t position() const { return pos_; }
	bool empty() const { return remaining() == 0; }

private:
	void need(std::size_t n) const;

	ByteView data_;
	std::size_t pos_ = 0;
};

} // namespace be

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

} // namespace cusco
