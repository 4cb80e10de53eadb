#include "cusco/crypto.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <sodium.h>

namespace cusco::crypto {

namespace {

constexpr char kRatchetContext[crypto_kdf_CONTEXTBYTES + 1] = "CUSCOrat";
constexpr char kRootContext[crypto_kdf_CONTEXTBYTES + 1] = "CUSCOroo";
constexpr std::uint64_t kSubkeyNext = 1;
constexpr std::uint64_t kSubkeyChunk = 2;

constexpr const char *kKeyFormat = "cusco-key-v1";

void init()
{
	static const bool ok = sodium_init() >= 0;
	if (!ok)
		throw Error("libsodium initialisation failed (entropy source unavailable)");
}

SecretKey derive(const SecretKey &key, std::uint64_t id, const char *context)
{
	SecretKey out;
	crypto_kdf_derive_from_key(out.data(), kKeyBytes, id, context, key.data());
	return out;
}

void write_file_exclusive(const std::filesystem::path &path, const std::string &body, mode_t mode)
{
	int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, mode);
	if (fd < 0)
		throw IoError("cannot create key file " + path.string() + ": " + std::strerror(errno));
	std::size_t done = 0;
	while (done < body.size()) {
		auto n = ::write(fd, body.data() + done, body.size() - done);
		if (n < 0) {
			::close(fd);
			throw IoError("write failed for " + path.string());
		}
		done += static_cast<std::size_t>(n);
	}
	::fsync(fd);
	::close(fd);
}

nlohmann::json read_key_json(const std::filesystem::path &path)
{
	std::ifstream in(path);
	if (!in)
		throw IoError("cannot read key file " + path.string());
	try {
		return nlohmann::json::parse(in);
	} catch (const nlohmann::json::exception &) {
		throw FormatError("key file " + path.string() + " is not valid JSON");
	}
}

std::string key_json(const ProjectKeypair &kp, const char *kind, ByteView key)
{
	nlohmann::json j = {
	    {"format", kKeyFormat},
	    {"kind", kind},
	    {"project_id", kp.project_id.str()},
	    {"created_at_ns", kp.created_at_ns},
	    {"key", to_hex(key)},
	};
	return j.dump(2) + "\n";
}

} // namespace

SecretKey::SecretKey(ByteView raw)
{
	if (raw.size() != kKeyBytes)
		throw FormatError("secret key must be 32 bytes");
	std::copy(raw.begin(), raw.end(), bytes_.begin());
}

SecretKey::~SecretKey() { wipe(); }

SecretKey SecretKey::random()
{
	init();
	SecretKey k;
	randombytes_buf(k.bytes_.data(), k.bytes_.size());
	return k;
}

void SecretKey::wipe() { sodium_memzero(bytes_.data(), bytes_.size()); }

bool operator==(const SecretKey &a, const SecretKey &b)
{
	return sodium_memcmp(a.bytes_.data(), b.bytes_.data(), kKeyBytes) == 0;
}

ProjectKeypair generate_project_keys(const Uuid &project_id, std::int64_t created_at_ns)
{
	init();
	ProjectKeypair kp;
	kp.project_id = project_id;
	kp.created_at_ns = created_at_ns;
	if (crypto_box_keypair(kp.public_wrap_key.data(), kp.private_unwrap_key.data()) != 0)
		throw Error("key generation failed");
	return kp;
}

PublicKey public_from_private(const SecretKey &priv)
{
	init();
	PublicKey pub{};
	if (crypto_scalarmult_base(pub.data(), priv.data()) != 0)
		throw KeyError("invalid private key");
	return pub;
}

Bytes wrap(const PublicKey &recipient, ByteView payload)
{
	init();
	Bytes out(payload.size() + crypto_box_SEALBYTES);
	if (crypto_box_seal(out.data(), payload.data(), payload.size(), recipient.data()) != 0)
		throw Error("key wrapping failed");
	return out;
}

Bytes unwrap(const PublicKey &recipient, const SecretKey &priv, ByteView wrapped)
{
	init();
	if (wrapped.size() < crypto_box_SEALBYTES)
		throw KeyError("wrapped key too short");
	Bytes out(wrapped.size() - crypto_box_SEALBYTES);
	if (crypto_box_seal_open(out.data(), wrapped.data(), wrapped.size(), recipient.data(),
	                         priv.data()) != 0) {
		sodium_memzero(out.data(), out.size());
		throw KeyError("key unwrap failed: not sealed to this private key");
	}
	return out;
}

SecretKey ratchet_initial(const SecretKey &session_root) { return derive(session_root, 0, kRootContext); }

SecretKey ratchet_next(const SecretKey &key) { return derive(key, kSubkeyNext, kRatchetContext); }

SecretKey chunk_key(const SecretKey &key) { return derive(key, kSubkeyChunk, kRatchetContext); }

void RatchetState::advance()
{
	SecretKey next = ratchet_next(current_key);
	current_key.wipe();
	current_key = next;
	next.wipe();
	++counter;
}

Nonce nonce_for_index(std::uint64_t global_index)
{
	Nonce n{};
	for (int i = 0; i < 8; ++i)
		n[4 + i] = static_cast<std::uint8_t>(global_index >> (56 - 8 * i));
	return n;
}

Bytes seal(const SecretKey &key, const Nonce &nonce, ByteView ad, ByteView plaintext, Tag &tag)
{
	init();
	Bytes out(plaintext.size());
	unsigned long long tag_len = 0;
	crypto_aead_chacha20poly1305_ietf_encrypt_detached(out.data(), tag.data(), &tag_len,
	                                                   plaintext.data(), plaintext.size(),
	                                                   ad.data(), ad.size(), nullptr,
	                                                   nonce.data(), key.data());
	return out;
}

bool open(const SecretKey &key, const Nonce &nonce, ByteView ad, ByteView ciphertext,
          const Tag &tag, Bytes &out)
{
	init();
	out.assign(ciphertext.size(), 0);
	int rc = crypto_aead_chacha20poly1305_ietf_decrypt_detached(
	    out.data(), nullptr, ciphertext.data(), ciphertext.size(), tag.data(), ad.data(),
	    ad.size(), nonce.data(), key.data());
	if (rc != 0) {
		out.clear();
		return false;
	}
	return true;
}

Digest blake2b256(ByteView data)
{
	init();
	Digest d{};
	crypto_generichash(d.data(), d.size(), data.data(), data.size(), nullptr, 0);
	return d;
}

std::string sha256_hex(ByteView data)
{
	init();
	std::array<std::uint8_t, crypto_hash_sha256_BYTES> d{};
	crypto_hash_sha256(d.data(), data.data(), data.size());
	return to_hex(d);
}

void save_public_key(const std::filesystem::path &path, const ProjectKeypair &kp)
{
	write_file_exclusive(path, key_json(kp, "public", kp.public_wrap_key), 0644);
}

void save_private_key(const std::filesystem::path &path, const ProjectKeypair &kp)
{
	write_file_exclusive(path, key_json(kp, "private", kp.private_unwrap_key.view()), 0600);
}

PublicKeyFile load_public_key(const std::filesystem::path &path)
{
	auto j = read_key_json(path);
	if (j.value("format", "") != kKeyFormat || j.value("kind", "") != "public")
		throw FormatError(path.string() + " is not a project public key file");
	PublicKeyFile f;
	f.project_id = Uuid::parse(j.at("project_id").get<std::string>());
	auto raw = from_hex(j.at("key").get<std::string>());
	if (raw.size() != kKeyBytes)
		throw FormatError(path.string() + ": public key must be 32 bytes");
	std::copy(raw.begin(), raw.end(), f.key.begin());
	return f;
}

PrivateKeyFile load_private_key(const std::filesystem::path &path)
{
	auto j = read_key_json(path);
	if (j.value("format", "") != kKeyFormat || j.value("kind", "") != "private")
		throw FormatError(path.string() + " is not a project private key file");
	PrivateKeyFile f;
	f.project_id = Uuid::parse(j.at("project_id").get<std::string>());
	auto raw = from_hex(j.at("key").get<std::string>());
	f.key = SecretKey(raw);
	sodium_memzero(raw.data(), raw.size());
	f.public_key = public_from_private(f.key);
	return f;
}

bool is_private_key_file(const std::filesystem::path &path)
{
	std::error_code ec;
	if (!std::filesystem::is_regular_file(path, ec))
		return false;
	if (std::filesystem::file_size(path, ec) > 64 * 1024)
		return false;
	try {
		auto j = read_key_json(path);
		return j.is_object() && j.value("format", "") == kKeyFormat &&
		       j.value("kind", "") == "private";
	} catch (const Error &) {
		return false;
	}
}

} // namespace cusco::crypto
