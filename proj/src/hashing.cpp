#include "tdks/hashing.hpp"

#include <stdexcept>

#include <openssl/evp.h>

namespace tdks {

struct Hasher::Impl {
    EVP_MD_CTX* ctx = nullptr;
    bool finished = false;
    std::string digest;
};

Hasher::Hasher() : impl_(std::make_unique<Impl>()) {
    impl_->ctx = EVP_MD_CTX_new();
    if (!impl_->ctx || EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256: digest initialization failed");
    }
}

Hasher::~Hasher() { EVP_MD_CTX_free(impl_->ctx); }

Hasher& Hasher::update(std::span<const std::byte> bytes) {
    if (impl_->finished) throw std::logic_error("sha256: update after digest");
    EVP_DigestUpdate(impl_->ctx, bytes.data(), bytes.size());
    return *this;
}

Hasher& Hasher::update(std::string_view text) {
    return update(std::as_bytes(std::span<const char>(text.data(), text.size())));
}

std::string Hasher::hex_digest() {
    if (!impl_->finished) {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(impl_->ctx, md, &len);
        static constexpr char kHex[] = "0123456789abcdef";
        impl_->digest.reserve(2 * len);
        for (unsigned int i = 0; i < len; ++i) {
            impl_->digest.push_back(kHex[md[i] >> 4]);
            impl_->digest.push_back(kHex[md[i] & 0xF]);
        }
        impl_->finished = true;
    }
    return impl_->digest;
}

std::string Hasher::short_digest() { return hex_digest().substr(0, 16); }

}  // namespace tdks
