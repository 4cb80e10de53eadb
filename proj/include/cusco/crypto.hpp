#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "cusco/common.hpp"

namespace cusco::crypto {

constexpr std::size_t kKeyBytes = 32;
constexpr std::size_t kNonceBytes = 12;
constexpr std::size_t kTagBytes = 16;
// Sealed-box overhead: ephemeral public key plus MAC.
constexpr std::size_t kWrapOverhead = 48;

using PublicKey = std::array<std::uint8_t, kKeyBytes>;
using Nonce = std::array<std::uint8_t, kNonceBytes>;
using Tag = std::array<std::uint8_t, kTagBytes>;
using Digest = std::array<std::uint8_t, 32>;

// 32 bytes of symmetric or private key material, wiped on destruction.
class SecretKey {
public:
	SecretKey() = default;
	explicit SecretKey(ByteView raw);
	SecretKey(const SecretKey &other) = default;
	SecretKey &operator=(const SecretKey &other) = default;
	~SecretKey();

	static SecretKey random();

	const std::uint8_t *data() const { return bytes_.data(); }
	std::uint8_t *data() { return bytes_.data(); }
	ByteView view() const { return bytes_; }
	void wipe();

	friend bool operator==(const SecretKey &a, const SecretKey &b);

private:
	std::array<std::uint8_t, kKeyBytes> bytes_{};
};

struct ProjectKeypair {
	Uuid project_id;
	PublicKey public_wrap_key{};
	SecretKey private_unwrap_key;
	std::int64_t created_at_ns = 0;
};

// Fresh X25519 keypair from the system CSPRNG.
ProjectKeypair generate_project_keys(const Uuid &project_id, std::int64_t created_at_ns);

PublicKey public_from_private(const SecretKey &priv);

// Anonymous sealed box to `recipient`. Only the matching private key opens it.
Bytes wrap(const PublicKey &recipient, ByteView payload);

// Throws KeyError on authentication failure; never returns partial plaintext.
Bytes unwrap(const PublicKey &recipient, const SecretKey &priv, ByteView wrapped);

// One-way key schedule. key(0) comes from the session root; every chunk key
// and the next ratchet key are independent derivations of key(i).
SecretKey ratchet_initial(const SecretKey &session_root);
SecretKey ratchet_next(const SecretKey &key);
SecretKey chunk_key(const SecretKey &key);

struct RatchetState {
	std::uint64_t counter = 0;
	SecretKey current_key;

	// Replaces current_key with its successor; the old key is wiped.
	void advance();
};

Nonce nonce_for_index(std::uint64_t global_index);

// ChaCha20-Poly1305 (IETF) with detached tag.
Bytes seal(const SecretKey &key, const Nonce &nonce, ByteView ad, ByteView plaintext, Tag &tag);

// Returns false (and leaves `out` empty) when the tag does not verify.
bool open(const SecretKey &key, const Nonce &nonce, ByteView ad, ByteView ciphertext,
          const Tag &tag, Bytes &out);

Digest blake2b256(ByteView data);
std::string sha256_hex(ByteView data);

// Key files: small JSON documents with a hex key body.
void save_public_key(const std::filesystem::path &path, const ProjectKeypair &kp);
void save_private_key(const std::filesystem::path &path, const ProjectKeypair &kp);

struct PublicKeyFile {
	Uuid project_id;
	PublicKey key{};
};

struct PrivateKeyFile {
	Uuid project_id;
	SecretKey key;
	PublicKey public_key{};
};

PublicKeyFile load_public_key(const std::filesystem::path &path);
PrivateKeyFile load_private_key(const std::filesystem::path &path);

// True if `path` parses as a private key file of any project.
bool is_private_key_file(const std::filesystem::path &path);

} // namespace cusco::crypto
