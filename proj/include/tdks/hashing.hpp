#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace tdks {

/// Incremental SHA-256; digests are reported as lowercase hex.
class Hasher {
public:
    Hasher();
    ~Hasher();
    Hasher(const Hasher&) = delete;
    Hasher& operator=(const Hasher&) = delete;

    Hasher& update(std::span<const std::byte> bytes);
    Hasher& update(std::string_view text);

    template <typename Derived>
    Hasher& update(const Eigen::DenseBase<Derived>& m) {
        const auto& e = m.derived();
        const auto* p = reinterpret_cast<const std::byte*>(e.data());
        return update(std::span<const std::byte>(p, sizeof(typename Derived::Scalar) * e.size()));
    }

    /// First 16 hex characters of the digest.
    std::string short_digest();
    std::string hex_digest();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

template <typename Derived>
std::string content_hash(const Eigen::DenseBase<Derived>& m) {
    Hasher h;
    h.update(m);
    return h.short_digest();
}

}  // namespace tdks
