#include "cusco/common.hpp"

#include <chrono>
#include <cstdio>

#include <sodium.h>

namespace cusco {

namespace {

void ensure_sodium()
{
	static const bool ok = sodium_init() >= 0;
	if (!ok)
		throw Error("libsodium initialisation failed (entropy source unavailable)");
}

int hex_value(char c)
{
	if (c >= '0' && c <= '9')
		return c - '0';
	if (c >= 'a' && c <= 'f')
		return c - 'a' + 10;
	if (c >= 'A' && c <= 'F')
		return c - 'A' + 10;
	return -1;
}

} // namespace

Uuid Uuid::random()
{
	ensure_sodium();
	Uuid id;
	randombytes_buf(id.bytes.data(), id.bytes.size());
	id.bytes[6] = static_cast<std::uint8_t>((id.bytes[6] & 0x0f) | 0x40);
	id.bytes[8] = static_cast<std::uint8_t>((id.bytes[8] & 0x3f) | 0x80);
	return id;
}

Uuid Uuid::parse(std::string_view text)
{
	std::string hex;
	for (char c : text) {
		if (c == '-')
			continue;
		hex.push_back(c);
	}
	if (hex.size() != 32)
		throw FormatError("invalid UUID: '" + std::string(text) + "'");
	Uuid id;
	auto raw = from_hex(hex);
	std::copy(raw.begin(), raw.end(), id.bytes.begin());
	return id;
}

std::string Uuid::str() const
{
	auto hex = to_hex(bytes);
	return hex.substr(0, 8) + "-" + hex.substr(8, 4) + "-" + hex.substr(12, 4) + "-" +
	       hex.substr(16, 4) + "-" + hex.substr(20);
}

bool Uuid::is_nil() const
{
	for (auto b : bytes)
		if (b != 0)
			return false;
	return true;
}

std::int64_t SteadyClock::now_ns() const
{
	return std::chrono::duration_cast<std::chrono::nanoseconds>(
	           std::chrono::steady_clock::now().time_since_epoch())
	    .count();
}

std::int64_t SystemClock::now_ns() const
{
	return std::chrono::duration_cast<std::chrono::nanoseconds>(
	           std::chrono::system_clock::now().time_since_epoch())
	    .count();
}

namespace be {

void put_u8(Bytes &out, std::uint8_t v) { out.push_back(v); }

void put_u16(Bytes &out, std::uint16_t v)
{
	out.push_back(static_cast<std::uint8_t>(v >> 8));
	out.push_back(static_cast<std::uint8_t>(v));
}

void put_u32(Bytes &out, std::uint32_t v)
{
	for (int shift = 24; shift >= 0; shift -= 8)
		out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_u64(Bytes &out, std::uint64_t v)
{
	for (int shift = 56; shift >= 0; shift -= 8)
		out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void put_bytes(Bytes &out, ByteView v) { out.insert(out.end(), v.begin(), v.end()); }

std::uint16_t load_u16(const std::uint8_t *p)
{
	return static_cast<std::uint16_t>((p[0] << 8) | p[1]);
}

std::uint32_t load_u32(const std::uint8_t *p)
{
	return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
	       (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

std::uint64_t load_u64(const std::uint8_t *p)
{
	return (std::uint64_t{load_u32(p)} << 32) | load_u32(p + 4);
}

void Reader::need(std::size_t n) const
{
	if (remaining() < n)
		throw FormatError("unexpected end of data (need " + std::to_string(n) + " bytes, have " +
		                  std::to_string(remaining()) + ")");
}

std::uint8_t Reader::u8()
{
	need(1);
	return data_[pos_++];
}

std::uint16_t Reader::u16()
{
	need(2);
	auto v = load_u16(data_.data() + pos_);
	pos_ += 2;
	return v;
}

std::uint32_t Reader::u32()
{
	need(4);
	auto v = load_u32(data_.data() + pos_);
	pos_ += 4;
	return v;
}

std::uint64_t Reader::u64()
{
	need(8);
	auto v = load_u64(data_.data() + pos_);
	pos_ += 8;
	return v;
}

ByteView Reader::bytes(std::size_t n)
{
	need(n);
	auto v = data_.subspan(pos_, n);
	pos_ += n;
	return v;
}

std::string Reader::string(std::size_t n)
{
	auto v = bytes(n);
	return std::string(v.begin(), v.end());
}

} // namespace be

std::string to_hex(ByteView data)
{
	static constexpr char digits[] = "0123456789abcdef";
	std::string out;
	out.reserve(data.size() * 2);
	for (auto b : data) {
		out.push_back(digits[b >> 4]);
		out.push_back(digits[b & 0x0f]);
	}
	return out;
}

Bytes from_hex(std::string_view hex)
{
	if (hex.size() % 2 != 0)
		throw FormatError("odd-length hex string");
	Bytes out;
	out.reserve(hex.size() / 2);
	for (std::size_t i = 0; i < hex.size(); i += 2) {
		int hi = hex_value(hex[i]);
		int lo = hex_value(hex[i + 1]);
		if (hi < 0 || lo < 0)
			throw FormatError("invalid hex digit");
		out.push_back(static_cast<std::uint8_t>((hi << 4) | lo));
	}
	return out;
}

} // namespace cusco
